//! Published optimization values recomputed from the bundled raw tables.

use complab::bench::{bundled, parse_metrics, plot_data_csv, score_report, write_metrics, OptTable};
use complab::score::WeightProfile;

const TOL: f64 = 0.005;

fn table(name: &str) -> OptTable {
    let methods = parse_metrics(bundled(name).unwrap()).unwrap();
    score_report(&methods, &WeightProfile::builtin()).unwrap()
}

fn assert_bar(t: &OptTable, method: &str, profile: &str, published: f64) {
    let got = t.get(method, profile).unwrap_or_else(|| panic!("no {method}/{profile}")).opt;
    assert!((got - published).abs() <= TOL, "{method} {profile}: {got} vs {published}");
}

#[test]
fn gpt2_standalone_bars() {
    let t = table("gpt2_standalone");
    assert_bar(&t, "8-bit", "balanced", 1.7439);
    assert_bar(&t, "8-bit", "energy", 0.6987);
    assert_bar(&t, "8-bit", "runtime", 2.7891);
    assert_bar(&t, "4-bit", "balanced", 0.8165);
    assert_bar(&t, "4-bit", "energy", 0.5837);
    assert_bar(&t, "4-bit", "runtime", 1.0492);
    assert_bar(&t, "Distil", "balanced", 1.0526);
    assert_bar(&t, "AH90", "balanced", 1.4651);
    assert_bar(&t, "AH80", "balanced", 1.7391);
}

#[test]
fn gpt2_large_and_xl_bars() {
    let t = table("gpt2_large_standalone");
    assert_bar(&t, "8-bit", "balanced", 1.07084);
    assert_bar(&t, "4-bit", "balanced", 0.59813);
    assert_bar(&t, "Distil", "balanced", 1.08424);
    assert_bar(&t, "AH90", "balanced", 1.17478);
    assert_bar(&t, "AH80", "balanced", 1.33334);
    let t = table("gpt2_xl_standalone");
    assert_bar(&t, "8-bit", "balanced", 0.721524025);
    assert_bar(&t, "4-bit", "balanced", 0.566166903);
    assert_bar(&t, "AH90", "balanced", 0.921462808);
    assert_bar(&t, "AH80", "balanced", 1.007529558);
}

#[test]
fn logic_suite_bars() {
    let t = table("opt_minillm_logic");
    assert_bar(&t, "OPT-MiniLLM", "balanced", 0.66968452);
    assert_bar(&t, "OPT-MiniLLM", "energy", 0.622052641);
    assert_bar(&t, "OPT-MiniLLM", "runtime", 0.717316399);
    assert_bar(&t, "OPT-6.7B", "balanced", 0.667407177);
    assert_bar(&t, "OPT-KD", "balanced", 1.062630116);
    assert_bar(&t, "OPT-SeqKD", "balanced", 1.250386388);
    let t = table("llama_minillm_logic");
    assert_bar(&t, "Llama-MiniLLM", "balanced", 0.918925933);
    assert_bar(&t, "Llama-Reg", "balanced", 0.878329185);
    assert_bar(&t, "Llama-KD", "balanced", 0.829440576);
    assert_bar(&t, "Llama-SeqKD", "balanced", 0.854328414);
    let t = table("advanced_logic");
    assert_bar(&t, "Sheared-2.7B", "balanced", 1.635458581);
    assert_bar(&t, "MN-Minitron", "balanced", 0.759066826);
    // MMLU 0.252 sits just above 0.8 x floor, so the table's three-decimal
    // rounding moves this bar slightly past the shared tolerance.
    let sheared = t.get("Sheared-1.3B", "balanced").unwrap().opt;
    assert!((sheared - 1.915691408).abs() <= 0.006, "{sheared}");
    assert_bar(&t, "L3.1-Minitron", "balanced", 0.751760443);
}

#[test]
fn wikitext_bars() {
    let t = table("opt_minillm_wikitext");
    assert_bar(&t, "OPT-MiniLLM", "balanced", 0.663485094);
    assert_bar(&t, "OPT-MiniLLM", "energy", 0.616294155);
    assert_bar(&t, "OPT-6.7B", "balanced", 0.700325771);
    assert_bar(&t, "OPT-KD", "balanced", 0.646318553);
    assert_bar(&t, "OPT-SeqKD", "balanced", 0.734056012);
    let t = table("llama_minillm_wikitext");
    assert_bar(&t, "Llama-MiniLLM", "balanced", 0.769588058);
    assert_bar(&t, "Llama-Reg", "balanced", 0.731965422);
    assert_bar(&t, "Llama-KD", "balanced", 1.024243621);
    assert_bar(&t, "Llama-SeqKD", "balanced", 1.058178532);
    let t = table("advanced_wikitext");
    assert_bar(&t, "Sheared-2.7B", "balanced", 0.87165772);
    assert_bar(&t, "Sheared-1.3B", "balanced", 0.78499085);
    assert_bar(&t, "MN-Minitron", "balanced", 0.722789746);
}

/// The published bars for these two disagree with their own raw rows.
/// Pin what the rows give so nobody tunes the scorer toward the bars.
#[test]
fn unreproducible_bars_stay_at_their_computed_values() {
    let pruned = table("opt125m_pruned").get("Pruned", "balanced").unwrap().opt;
    assert!((pruned - 1.35597).abs() < 1e-4, "{pruned}");
    assert!((pruned - 1.2408).abs() > 0.1);
    let minitron = table("advanced_wikitext").get("L3.1-Minitron", "balanced").unwrap().opt;
    assert!((minitron - 0.87079).abs() < 1e-4, "{minitron}");
    assert!((minitron - 0.520076688).abs() > 0.3);
}

#[test]
fn rank_order_of_gpt2_standalone() {
    let t = table("gpt2_standalone");
    let balanced = t.rankings.iter().find(|r| r.profile.name == "balanced").unwrap();
    let order: Vec<&str> = balanced.entries.iter().map(|(m, _)| m.as_str()).collect();
    assert_eq!(order, ["4-bit", "Distil", "AH90", "AH80", "8-bit"]);
}

#[test]
fn write_then_parse_scores_identically() {
    for (name, text) in complab::bench::BUNDLED {
        let methods = parse_metrics(text).unwrap();
        let mut buf = Vec::new();
        write_metrics(&methods, &mut buf).unwrap();
        let again = parse_metrics(std::str::from_utf8(&buf).unwrap()).unwrap();
        let a = score_report(&methods, &WeightProfile::builtin()).unwrap();
        let b = score_report(&again, &WeightProfile::builtin()).unwrap();
        for (ra, rb) in a.rankings.iter().zip(&b.rankings) {
            for ((ma, xa), (mb, xb)) in ra.entries.iter().zip(&rb.entries) {
                assert_eq!(ma, mb);
                assert!((xa.opt - xb.opt).abs() <= 1e-12, "{name} {ma}");
            }
        }
    }
}

#[test]
fn plot_data_has_a_row_per_method_and_profile() {
    let csv = plot_data_csv(&table("gpt2_standalone")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,profile,opt");
    assert_eq!(lines.len(), 1 + 15);
    let one = plot_data_csv(&table("opt125m_pruned")).unwrap();
    assert_eq!(one.lines().count(), 1 + 3);
}

#[test]
fn balanced_is_the_mean_of_the_focused_profiles() {
    for (name, _) in complab::bench::BUNDLED {
        let t = table(name);
        for (method, b) in &t.rankings[0].entries {
            let e = t.get(method, "energy").unwrap().opt;
            let r = t.get(method, "runtime").unwrap().opt;
            let bal = t.get(method, "balanced").unwrap().opt;
            assert!((bal - (e + r) / 2.0).abs() < 1e-12, "{name} {method} {}", b.opt);
        }
    }
}
