//! Print the magnitude response of one beam over azimuth at a few
//! frequencies, as a coarse text polar plot.
//!
//! cargo run --release --example beam_pattern -- [filter index]

use asobo::array::{design_filterbank, ArrayGeometry};

fn main() -> asobo::Result<()> {
    let p: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(0);
    let geom = ArrayGeometry::uniform_circular(8, 0.1)?;
    let freqs = [500.0, 1000.0, 2000.0, 4000.0];
    let bank = design_filterbank(&geom, 8, &freqs, 1e-3)?;
    if p >= bank.filter_count() {
        return Err(asobo::Error::InvalidInput(format!("filter {p} out of range")));
    }
    println!("filter {p} steered to {:.0} deg; |response| in dB", bank.steer_angles()[p].to_degrees());
    print!("{:>6}", "deg");
    for f in freqs {
        print!("{:>9}", format!("{f} Hz"));
    }
    println!();
    for deg in (0..360).step_by(15) {
        print!("{deg:>6}");
        for f in freqs {
            let r = bank.array_response(p, (deg as f64).to_radians(), f)?;
            print!("{:>9.1}", 20.0 * r.norm().max(1e-6).log10());
        }
        println!();
    }
    Ok(())
}
