//! Generates one network-B scenario on the bundled graph and prints the
//! delay table, the path choice sets of one pair and per-station count levels.

use odest::netgen::b::{default_graph, generate_scenario_b, route_table, GenBConfig};

fn main() -> odest::Result<()> {
    let g = default_graph();
    let cfg = GenBConfig::for_window(60, 1.0, 10.0, 100, 7)?;
    let sc = generate_scenario_b(&cfg, &g)?;
    let labels = g.access_labels();

    println!("expected delays (bins of {} min):", cfg.bin_width);
    for row in sc.delays.to_rows() {
        println!("  {}", row.iter().map(|d| format!("{d:2}")).collect::<Vec<_>>().join(" "));
    }

    let routes = route_table(&g, &cfg)?;
    let (i, j) = (0, 13);
    let r = routes[i][j].as_ref().expect("distinct stations");
    println!("\n{} -> {}:", labels[i], labels[j]);
    for (p, pr) in r.alternatives.iter().zip(&r.probabilities) {
        println!(
            "  total {:5.1} min (ride {:4.1}, wait {:4.1}, walk {:3.1}, transfers {})  p = {:.3}",
            p.total_time, p.z1, p.z2, p.z3, p.z4, pr
        );
    }
    let worst = routes
        .iter()
        .flatten()
        .flatten()
        .flat_map(|r| r.alternatives.iter().map(|p| p.total_time))
        .fold(0.0, f64::max);
    let sizes: Vec<usize> = routes.iter().flatten().flatten().map(|r| r.alternatives.len()).collect();
    println!(
        "\nlongest alternative {worst:.1} min; choice sets of {}..{} paths",
        sizes.iter().min().unwrap(),
        sizes.iter().max().unwrap()
    );

    let d = &sc.data;
    println!("\nmean entries per bin / exits per bin:");
    for (s, name) in labels.iter().enumerate() {
        let mut x = 0.0;
        let mut y = 0.0;
        for n in 0..d.observations() {
            x += (0..d.departure_bins()).map(|t| d.x(n, t, s)).sum::<f64>();
            y += (0..d.arrival_bins()).map(|t| d.y(n, t, s)).sum::<f64>();
        }
        let nb = d.observations() as f64;
        println!(
            "  {name:>3}: {:7.1} {:7.1}",
            x / nb / d.departure_bins() as f64,
            y / nb / d.arrival_bins() as f64
        );
    }
    Ok(())
}
