//! Metric tables transcribed from published compression results.

/// `(name, csv text)` for every bundled table.
pub const BUNDLED: [(&str, &str); 10] = [
    ("gpt2_standalone", include_str!("../../data/gpt2_standalone.csv")),
    ("opt125m_pruned", include_str!("../../data/opt125m_pruned.csv")),
    ("gpt2_large_standalone", include_str!("../../data/gpt2_large_standalone.csv")),
    ("gpt2_xl_standalone", include_str!("../../data/gpt2_xl_standalone.csv")),
    ("opt_minillm_logic", include_str!("../../data/opt_minillm_logic.csv")),
    ("opt_minillm_wikitext", include_str!("../../data/opt_minillm_wikitext.csv")),
    ("llama_minillm_logic", include_str!("../../data/llama_minillm_logic.csv")),
    ("llama_minillm_wikitext", include_str!("../../data/llama_minillm_wikitext.csv")),
    ("advanced_logic", include_str!("../../data/advanced_logic.csv")),
    ("advanced_wikitext", include_str!("../../data/advanced_wikitext.csv")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}
