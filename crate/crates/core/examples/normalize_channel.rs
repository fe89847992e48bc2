//! Builds a three-path link by hand, normalizes it into model space and maps it back.
//!
//! cargo run --release --example normalize_channel

use mpcgen::channel::{
    decode_direction, denormalize_rx_power, denormalize_tof, normalize_link, synthesize_cir, LinkChannel, MpcPath,
    NormStats,
};
use num_complex::Complex64;

fn main() -> anyhow::Result<()> {
    let deg = f64::to_radians;
    let paths = [
        MpcPath::active(Complex64::new(2.0e-5, 1.0e-5), 420e-9, (deg(30.0), deg(-5.0)), (deg(210.0), deg(5.0))),
        MpcPath::active(Complex64::new(-6.0e-6, 3.0e-6), 455e-9, (deg(80.0), deg(-3.0)), (deg(170.0), deg(2.0))),
        MpcPath::active(Complex64::new(1.0e-6, -2.0e-6), 610e-9, (deg(-40.0), deg(-8.0)), (deg(300.0), deg(1.0))),
    ];
    let link = LinkChannel::from_paths(paths, 8, [0.0, 0.0, 25.0], [120.0, 40.0, 1.5])?;
    link.check_invariants()?;
    println!("tof {:.1} ns, rx power {:.2} dB, {} of {} slots active", link.tof_s() * 1e9, link.rx_power_db(), link.n_active(), link.capacity());

    let stats = NormStats::new(6.5, 0.5, -95.0, 8.0, 1e-6)?;
    let n = normalize_link(&link, &stats)?;
    n.check_invariants()?;
    println!("tof_n {:.4}, rx_power_n {:.4}", n.tof_n, n.rx_power_n);
    for (k, s) in n.slots.iter().filter(|s| s.present).enumerate() {
        let (az, el) = decode_direction(s.aod_unit)?;
        println!(
            "slot {k}: gain_n ({:+.4}, {:+.4}) excess_delay_n {:.4} aod ({:.1}°, {:.1}°)",
            s.gain_re_n,
            s.gain_im_n,
            s.excess_delay_n,
            az.to_degrees(),
            el.to_degrees()
        );
    }
    println!(
        "round trip: tof {:.6} ns, rx power {:.6} dB",
        denormalize_tof(n.tof_n, &stats) * 1e9,
        denormalize_rx_power(n.rx_power_n, &stats)
    );

    let cir = synthesize_cir(&link, 64, 10e-9)?;
    let peak = cir.magnitudes().into_iter().enumerate().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    println!("CIR peak at tap {} ({:.3e}), overflow {}", peak.0, peak.1, cir.overflow);
    Ok(())
}
