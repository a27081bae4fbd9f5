//! Cluster accuracy via Hungarian matching and the incremental metrics.

use uvcil::clustering::PseudoLabel;
use uvcil::evaluation::{
    cluster_accuracy, hungarian_match, AccuracyMatrix, ContingencyMatrix, MetricsReport,
};

fn main() -> uvcil::Result<()> {
    let counts = ContingencyMatrix::new(vec![vec![0, 9, 1], vec![8, 0, 2], vec![1, 1, 7]])?;
    let m = hungarian_match(&counts)?;
    println!(
        "matching {:?} explains {} of {}",
        m.mapping,
        m.matched,
        counts.total()
    );

    let preds: Vec<PseudoLabel> = [1, 1, 0, 0, 2].into_iter().map(PseudoLabel).collect();
    println!(
        "cluster accuracy: {}",
        cluster_accuracy(&preds, &[0, 0, 1, 1, 1])?
    );

    // row k: accuracy on tasks 1..=k after stage k, plus the probe on task k+1
    let mut a = AccuracyMatrix::new(3);
    let cells = [
        (1, 1, 0.95),
        (1, 2, 0.05),
        (2, 1, 0.90),
        (2, 2, 0.93),
        (2, 3, 0.05),
        (3, 1, 0.85),
        (3, 2, 0.90),
        (3, 3, 0.92),
    ];
    for (k, i, v) in cells {
        a.set(k, i, v);
    }
    let report = MetricsReport::from_matrix(a)?;
    println!("{}", report.to_json());
    print!("{}", report.to_csv());
    Ok(())
}
