use std::fmt::Write;

use super::bleu::BleuReport;
use super::trainer::{SampleTranslation, TrainHistory};

/// Per-epoch losses and rates; contains no wall-clock data so reruns with
/// the same seed produce identical bytes.
pub fn history_csv(h: &TrainHistory) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,learning_rate\n");
    for e in &h.epochs {
        let _ = writeln!(s, "{},{:.8},{:.8},{:e}", e.epoch, e.train_loss, e.val_loss, e.lr);
    }
    s
}

pub fn timing_csv(h: &TrainHistory) -> String {
    let mut s = String::from("epoch,seconds\n");
    for e in &h.epochs {
        let _ = writeln!(s, "{},{:.4}", e.epoch, e.seconds);
    }
    s
}

pub fn bleu_csv(r: &BleuReport) -> String {
    let mut head = Vec::new();
    let mut row = Vec::new();
    for (k, b) in r.bleu.iter().enumerate() {
        head.push(format!("bleu{}", k + 1));
        row.push(format!("{b:.6}"));
    }
    for (n, p) in r.precisions.iter().enumerate() {
        head.push(format!("p{}", n + 1));
        row.push(format!("{p:.6}"));
    }
    head.extend(["brevity_penalty", "candidate_len", "reference_len"].map(String::from));
    row.push(format!("{:.6}", r.brevity_penalty));
    row.push(r.candidate_len.to_string());
    row.push(r.reference_len.to_string());
    format!("{}\n{}\n", head.join(","), row.join(","))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Index, reference, hypothesis and predicted glosses per record; tokens
/// are space-joined and fields quoted when needed.
pub fn translations_csv(rows: &[SampleTranslation]) -> String {
    let mut s = String::from("index,reference,hypothesis,gloss\n");
    for t in rows {
        let gloss = t.gloss_hypothesis.as_ref().map(|g| g.join(" ")).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{}",
            t.index,
            csv_field(&t.reference.join(" ")),
            csv_field(&t.hypothesis.join(" ")),
            csv_field(&gloss)
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::csv_field;

    #[test]
    fn csv_fields_are_quoted_only_when_needed() {
        assert_eq!(csv_field("a b"), "a b");
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
        assert_eq!(csv_field("x\ny"), "\"x\ny\"");
    }
}
