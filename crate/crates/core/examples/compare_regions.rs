//! Builds the region with every formulation and compares each against the
//! DistFlow reference; also writes an SVG overlay.
//!
//! cargo run --release --example compare_regions -- [points] [out.svg]

use flexdom::caseio::case33;
use flexdom::cli::render_region_svg;
use flexdom::formulations::FormulationKind;
use flexdom::region::{assemble_polygon, compare};
use flexdom::sweep::{sweep_boundary, SweepConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let points: usize = args.next().map_or(Ok(60), |s| s.parse())?;
    let svg_path = args.next().unwrap_or_else(|| "regions_h14.svg".into());

    let net = case33().scale_loads(14)?;
    let mut boundaries = Vec::new();
    for kind in FormulationKind::ALL {
        boundaries.push((
            kind,
            sweep_boundary(&net, &SweepConfig::new(kind).with_points(points))?,
        ));
    }
    let polygons = boundaries
        .iter()
        .map(|(k, b)| Ok((*k, assemble_polygon(&b.points)?)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let reference = &polygons
        .iter()
        .find(|(k, _)| *k == FormulationKind::DistFlow)
        .expect("DistFlow swept")
        .1;

    println!(
        "{:<14} {:>9} {:>10} {:>10} {:>9} {:>9} {:>8}",
        "formulation", "area", "Hausdorff", "sym diff", "import", "export", "time s"
    );
    for ((kind, poly), (_, b)) in polygons.iter().zip(&boundaries) {
        let m = compare(poly, reference);
        println!(
            "{:<14} {:>9.5} {:>10.2e} {:>10.2e} {:>9.5} {:>9.5} {:>8.3}",
            kind.label(),
            m.area,
            m.hausdorff_vs_ref,
            m.sym_diff_area_vs_ref,
            m.max_import_p,
            m.max_export_p,
            b.wall_time.as_secs_f64()
        );
    }

    let traces: Vec<_> = boundaries.iter().map(|(k, b)| (*k, b)).collect();
    std::fs::write(
        &svg_path,
        render_region_svg("33-bus feeder, hour 14", &traces),
    )?;
    println!("wrote {svg_path}");
    Ok(())
}
