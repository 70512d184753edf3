//! Scores a few hand-made predictions against one mask.
//!
//! cargo run --example metrics [pred_dir gt_dir]

use std::path::Path;

use dganet::metrics::{e_measure, evaluate_pair_dir, mae, s_measure, weighted_fmeasure, EMode};
use dganet::tensor::Tensor;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let [pred, gt] = args.as_slice() {
        let rep = evaluate_pair_dir(Path::new(pred), Path::new(gt), EMode::Adaptive)?;
        println!("{}", serde_json::to_string_pretty(&rep.aggregate)?);
        return Ok(());
    }
    let n = 32;
    let gt = Tensor::from_fn(&[n, n], |i| {
        let (r, c) = ((i / n) as i64 - 16, (i % n) as i64 - 16);
        if r * r + c * c < 64 { 1.0 } else { 0.0 }
    });
    let cases = [
        ("perfect", gt.clone()),
        ("blurred", gt.map(|v| 0.2 + 0.6 * v)),
        ("shifted", Tensor::from_fn(&[n, n], |i| gt.data()[(i + 3) % (n * n)])),
        ("inverted", gt.map(|v| 1.0 - v)),
        ("flat", Tensor::full(&[n, n], 0.5)),
    ];
    println!("{:10} {:>7} {:>7} {:>7} {:>7}", "", "S", "wF", "E", "MAE");
    for (name, p) in cases {
        println!(
            "{name:10} {:7.4} {:7.4} {:7.4} {:7.4}",
            s_measure(&p, &gt)?,
            weighted_fmeasure(&p, &gt)?,
            e_measure(&p, &gt)?,
            mae(&p, &gt)?
        );
    }
    Ok(())
}
