//! Text renderings of evaluation results. Floats use Rust's shortest
//! round-trip formatting, so equal values always print identically.

use std::fmt::Write;

use dcl_core::numerics::GradCheckReport;
use dcl_core::robusteval::{AnalysisRow, AttackResult, InvarianceReport};

pub const INVARIANCE_HEADER: &str = "index,perturbation_id,cosine,flipped,pass";
pub const ANALYSIS_HEADER: &str = "condition,positive_mean,random_mean";
pub const PROJECTION_HEADER: &str = "index,label,x,y";
pub const GRADCHECK_HEADER: &str = "check,max_rel_error,max_abs_error,checked,tol,passed";

pub fn invariance_csv(r: &InvarianceReport) -> String {
    let mut s = format!("{INVARIANCE_HEADER}\n");
    for x in &r.records {
        let _ = writeln!(s, "{},{},{},{},{}", x.index, x.perturbation_id, x.cosine, x.flipped as u8, x.pass as u8);
    }
    s
}

pub fn analysis_csv(rows: &[AnalysisRow]) -> String {
    let mut s = format!("{ANALYSIS_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.condition, r.positive_mean, r.random_mean);
    }
    s
}

pub fn projection_csv(coords: &[[f64; 2]], labels: &[usize]) -> String {
    let mut s = format!("{PROJECTION_HEADER}\n");
    for (i, (c, l)) in coords.iter().zip(labels).enumerate() {
        let _ = writeln!(s, "{i},{l},{},{}", c[0], c[1]);
    }
    s
}

pub fn gradcheck_csv(rows: &[(&str, &GradCheckReport)]) -> String {
    let mut s = format!("{GRADCHECK_HEADER}\n");
    for (name, r) in rows {
        let _ = writeln!(s, "{name},{},{},{},{},{}", r.max_rel_error, r.max_abs_error, r.checked, r.tol, r.passed as u8);
    }
    s
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Scatter plot with one circle per point, coloured by label.
pub fn projection_svg(coords: &[[f64; 2]], labels: &[usize], title: &str) -> String {
    const SIZE: f64 = 400.0;
    const PAD: f64 = 20.0;
    let span = |k: usize| {
        let lo = coords.iter().map(|c| c[k]).fold(f64::INFINITY, f64::min);
        let hi = coords.iter().map(|c| c[k]).fold(f64::NEG_INFINITY, f64::max);
        (lo, if hi > lo { hi - lo } else { 1.0 })
    };
    let ((x0, xs), (y0, ys)) = (span(0), span(1));
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{w}\" viewBox=\"0 0 {w} {w}\">\n\
         <title>{title}</title>\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
        w = SIZE
    );
    for (c, &l) in coords.iter().zip(labels) {
        let x = PAD + (c[0] - x0) / xs * (SIZE - 2.0 * PAD);
        let y = SIZE - PAD - (c[1] - y0) / ys * (SIZE - 2.0 * PAD);
        let _ = writeln!(s, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"4\" fill=\"{}\"/>", PALETTE[l % PALETTE.len()]);
    }
    s.push_str("</svg>\n");
    s
}

/// One block per attacked example, blank-line separated, after a summary
/// header. Success rate counts only examples classified correctly before
/// the attack.
pub fn attack_log(results: &[AttackResult]) -> String {
    let attacked: Vec<&AttackResult> = results.iter().filter(|r| r.initial_label == r.true_label).collect();
    let won = attacked.iter().filter(|r| r.success).count();
    let rate = if attacked.is_empty() { 0.0 } else { won as f64 / attacked.len() as f64 };
    let mut s = format!(
        "# pwws attack log\n# examples={} attacked={} successes={} success_rate={}\n",
        results.len(),
        attacked.len(),
        won,
        rate
    );
    for (i, r) in results.iter().enumerate() {
        let _ = write!(
            s,
            "\n[example {i}]\noriginal: {}\ntrue_label: {}\ninitial_label: {}\nfinal_label: {}\nsuccess: {}\nqueries: {}\n",
            r.original, r.true_label, r.initial_label, r.final_label, r.success, r.queries
        );
        for sub in &r.substitutions {
            let _ = writeln!(
                s,
                "substitution: position={} original={} replacement={} score={}",
                sub.position, sub.original, sub.replacement, sub.score
            );
        }
        let _ = writeln!(s, "adversarial: {}", r.adversarial);
    }
    s
}
