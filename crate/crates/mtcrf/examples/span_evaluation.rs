//! Span extraction, repair of malformed BIO sequences, and exact-match
//! span scoring. Spans match only when kind, start, and end all agree.

use mtcrf::corpus::MultiTaskSentence;
use mtcrf::eval::{evaluate, extract_spans, spans_to_bio};
use mtcrf::tagset::{MultiTaskSchema, Scheme, TaskSchema};

fn main() {
    let task = TaskSchema::build(
        "ent",
        ["O", "B-PER", "I-PER", "B-LOC", "I-LOC"].map(String::from),
        Scheme::Bio,
    )
    .unwrap();

    let show = |name: &str, surfaces: &[&str]| {
        let labels: Vec<usize> = surfaces.iter().map(|s| task.encode(s).unwrap()).collect();
        let (spans, repairs) = extract_spans(&task, &labels);
        println!("{name}: {surfaces:?}");
        for s in &spans {
            println!("  {} [{}, {})", s.kind, s.start, s.end);
        }
        println!("  repairs: {repairs}");
        (labels, spans)
    };

    let (labels, spans) = show("well-formed", &["B-PER", "I-PER", "O", "B-LOC", "O"]);
    let rebuilt = spans_to_bio(&task, labels.len(), &spans).unwrap();
    println!("  round trip exact: {}", rebuilt == labels);

    // A dangling I-LOC opens a fresh span; an I-PER after a LOC span closes
    // the LOC span and opens a PER one. Both count as repairs.
    show("malformed", &["I-LOC", "I-LOC", "I-PER", "O", "B-PER"]);

    // Scoring: gold has PER [0,2) and LOC [3,5); the prediction gets PER
    // right but shifts LOC to [2,5). One match, one miss, one false alarm.
    let schema = MultiTaskSchema::new(vec![task.clone()]).unwrap();
    let enc = |surfaces: &[&str]| -> Vec<usize> {
        surfaces.iter().map(|s| task.encode(s).unwrap()).collect()
    };
    let gold = vec![MultiTaskSentence {
        tokens: (0..5).map(|i| format!("w{i}")).collect(),
        gold: vec![enc(&["B-PER", "I-PER", "O", "B-LOC", "I-LOC"])],
    }];
    let pred = vec![vec![enc(&["B-PER", "I-PER", "B-LOC", "I-LOC", "I-LOC"])]];
    let report = evaluate(&schema, &gold, &pred).unwrap();
    let ent = report.task("ent").unwrap();
    println!("\ngold spans {}, predicted {}, matched {}", ent.gold_count, ent.pred_count, ent.matched);
    println!(
        "precision {:.2}  recall {:.2}  f1 {:.2}  token accuracy {:.2}",
        ent.precision, ent.recall, ent.f1, ent.token_accuracy
    );
    println!("\ncsv form:\n{}", report.to_csv());
}
