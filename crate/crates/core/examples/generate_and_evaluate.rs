//! Samples channels for the test split with a trained checkpoint, scores them
//! against the ray-traced truth and the trivial baselines, and draws several
//! prior samples for one link.
//!
//! cargo run --release --example generate_and_evaluate -- <dataset.mpcd> <checkpoint.mpck>

use mpcgen::dataset::{read_dataset, Split};
use mpcgen::metrics::{EvalOptions, METRIC_NAMES};
use mpcgen::model::{load_checkpoint, passes_divergence_filter, GenerateOptions, Generator, LinkInput};
use mpcgen::pipeline::{baselines, evaluate_split};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let (Some(ds_path), Some(ckpt)) = (args.next(), args.next()) else {
        anyhow::bail!("usage: generate_and_evaluate <dataset.mpcd> <checkpoint.mpck>");
    };
    let ds = read_dataset(ds_path.as_ref())?;
    let tr = load_checkpoint(ckpt.as_ref())?;
    let sigma = tr.sigma()[0];
    println!(
        "sigma_presence {sigma:.3e}: {}",
        if passes_divergence_filter(sigma) { "passes the divergence filter" } else { "fails the divergence filter" }
    );

    let ev = evaluate_split(&tr, &ds, Split::Test, 1, &GenerateOptions::default(), &EvalOptions::default())?;
    for (name, v) in METRIC_NAMES.iter().zip(ev.summary.values) {
        println!("{name:>20}: {v:.4}");
    }
    println!("{} of {} realizations empty", ev.summary.n_empty, ev.summary.n_links);
    let b = baselines(&ds, Split::Test)?;
    println!(
        "baselines: rx power MAE {:.3} dB, ToF MAE {:.2} ns, first-{} mask F1 {:.4}",
        b.rx_power_mae_db, b.tof_mae_ns, b.best_k, b.best_k_f1
    );

    let rec = ds.split(Split::Test).next().expect("non-empty test split");
    let input = LinkInput::from(rec);
    let generator = Generator::new(&tr.model, &tr.params, &tr.stats, &ds.header.heightmap)?;
    println!("link {}: truth {} paths, {:.2} dB", rec.link_id, rec.link.n_active(), rec.link.rx_power_db());
    for sample in 0..10 {
        let g = generator.generate(std::slice::from_ref(&input), 1, sample, &GenerateOptions::default())?;
        match &g[0].channel {
            Some(c) => println!(
                "  sample {sample}: {} paths, tof {:.1} ns, {:.2} dB",
                c.n_active(),
                c.tof_s() * 1e9,
                c.rx_power_db()
            ),
            None => println!("  sample {sample}: empty"),
        }
    }
    Ok(())
}
