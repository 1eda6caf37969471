//! Exact inference on one linear-chain CRF: log partition function,
//! per-position marginals, and the Viterbi path.

use mtcrf::chain::{self, ChainHead};
use ndarray::array;

fn main() {
    // Three labels over four tokens. Emission scores favor a two-token span
    // in the middle of the sentence.
    let surfaces = ["O", "B-X", "I-X"];
    let scores = array![
        [2.0, -1.0, -2.0],
        [-0.5, 1.5, 0.3],
        [-1.0, -0.8, 2.2],
        [1.0, -0.2, -0.5],
    ];
    let mut head = ChainHead::zeros(3, 1);
    // Transitions punish entering I-X from O and reward continuing a span.
    head.b = array![
        [0.5, 0.0, -4.0],
        [-0.3, -1.0, 1.8],
        [0.2, -0.5, 0.6],
    ];
    head.start = array![0.3, 0.0, -3.0];
    head.stop = array![0.2, -0.6, 0.0];

    let log_z = chain::log_partition(&scores, &head);
    println!("log partition: {log_z:.4}");

    let (marginals, _) = chain::forward_backward(&scores, &head);
    println!("\nlabel marginals per position:");
    print!("{:>4}", "t");
    for s in surfaces {
        print!("{s:>8}");
    }
    println!();
    for (t, row) in marginals.outer_iter().enumerate() {
        print!("{t:>4}");
        for p in row {
            print!("{p:>8.4}");
        }
        println!();
    }

    let (path, score) = chain::viterbi(&scores, &head);
    let rescored = chain::score_path(&scores, &head, &path);
    let decoded: Vec<&str> = path.iter().map(|&y| surfaces[y]).collect();
    println!("\nviterbi path: {decoded:?}");
    println!("path score: {score:.4} (rescored {rescored:.4})");
    println!("path probability: {:.4}", (score - log_z).exp());
}
