//! Builds each scenario suite and prints the first random layout as ASCII.
//!
//! `cargo run --example scenario_suite`

use blastcast::scenario::{make_scenario_suite, rasterize_layout, GridSpec, LayoutParams, SuiteKind};

fn main() -> blastcast::Result<()> {
    let params = LayoutParams::default();
    for kind in [SuiteKind::RandomLayout, SuiteKind::VariableSource, SuiteKind::VariableCharge] {
        let suite = make_scenario_suite(kind, 4, 1, &params)?;
        println!("{}:", kind.as_str());
        for c in &suite {
            println!(
                "  {} buildings={} source=({:.1}, {:.1}) charge={} kg",
                c.case_id,
                c.buildings.len(),
                c.source.x,
                c.source.y,
                c.source.charge_kg
            );
        }
    }

    let case = &make_scenario_suite(SuiteKind::RandomLayout, 1, 1, &params)?[0];
    let grid = GridSpec::square(32)?;
    let mask = rasterize_layout(case, &grid);
    // row 0 is y = 0, print north up
    for j in (0..grid.ny).rev() {
        let row: String = (0..grid.nx).map(|i| if mask.get(i, j) > 0.5 { '#' } else { '.' }).collect();
        println!("{row}");
    }
    Ok(())
}
