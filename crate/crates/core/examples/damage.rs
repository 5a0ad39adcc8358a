//! Damage assessment: classifies a few pressure-impulse points, then maps a
//! simulated case and prints the raster as characters.
//!
//! `cargo run --release --example damage`

use blastcast::damage::{classify, damage_map, format_percentages, point_load, DamageConfig, OBSTACLE_CODE};
use blastcast::dataset::CaseStatics;
use blastcast::euler2d::{simulate, SolverConfig};
use blastcast::scenario::{generate_random_layout, GridSpec, LayoutParams};

fn main() -> blastcast::Result<()> {
    let cfg = DamageConfig::default();
    for (dp, i) in [(5.0, 0.3), (20.0, 3.0), (40.0, 4.0), (120.0, 10.0)] {
        println!("dp+ {dp:6.1} kPa, I+ {i:5.2} kPa*s -> {}", classify(dp, i, &cfg).name());
    }

    let grid = GridSpec::square(48)?;
    let case = generate_random_layout(12, &LayoutParams::default())?;
    let seq = simulate(&case, &grid, &SolverConfig::default())?;
    let statics = CaseStatics::from_case(&case, &grid);
    let probe = point_load(&seq.history(grid.nx / 2, grid.ny / 2), seq.dt_out, &cfg);
    println!("domain center: {probe:?}");

    let map = damage_map(&seq, &statics.layout, &cfg)?;
    let raster = map.raster();
    let glyph = |c: u8| match c {
        OBSTACLE_CODE => '#',
        0 => '.',
        1 => '1',
        2 => '2',
        3 => '3',
        _ => '4',
    };
    for j in (0..grid.ny).rev() {
        let row: String = (0..grid.nx).map(|i| glyph(raster[j * grid.nx + i])).collect();
        println!("{row}");
    }
    print!("{}", format_percentages(&map));
    Ok(())
}
