//! Lists the named experiment settings and the generator configs they imply.

use odest::sensitivity::PRESETS;

fn main() -> odest::Result<()> {
    for p in PRESETS {
        let cfg = p.generator_config(100, 0)?;
        println!(
            "{:<8} window {:>2} min  eta {}  phi {:>6}  departure bins {}  gap {}",
            p.name,
            p.window,
            p.eta,
            p.phi,
            cfg.departure_bins,
            cfg.gap()
        );
    }
    Ok(())
}
