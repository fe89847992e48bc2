//! Reflection coefficient of the building materials against incidence angle.
//!
//! cargo run --release --example fresnel_materials

use mpcgen::scene::{fresnel_reflection, CONCRETE, GLASS, WOOD};

fn main() {
    let carrier = 3.5e9;
    println!("{:>6} {:>22} {:>22} {:>22}", "deg", "concrete", "wood", "glass");
    for deg in (0..=90).step_by(10) {
        let theta = (deg as f64).min(89.999).to_radians();
        let cells: Vec<String> = [CONCRETE, WOOD, GLASS]
            .iter()
            .map(|m| {
                let g = fresnel_reflection(m, theta, carrier);
                format!("|Γ| {:.4} ∠{:>7.2}°", g.norm(), g.arg().to_degrees())
            })
            .collect();
        println!("{deg:>6} {:>22} {:>22} {:>22}", cells[0], cells[1], cells[2]);
    }
}
