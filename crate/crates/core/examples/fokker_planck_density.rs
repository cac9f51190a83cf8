//! Stationary density of the complex equation on the disk of radius 4.

use blowuplab::dynamics::Params;
use blowuplab::fokker_planck::{build_adjoint, build_generator, normalize, solve_stationary, PdeGrid};

fn main() -> blowuplab::Result<()> {
    let p = Params::unit();
    let grid = PdeGrid::disk(129)?;
    let op = build_adjoint(&p, 1.0, 1.0, &grid)?;
    let gen = build_generator(&p, 1.0, 1.0, &grid)?;
    println!("{} unknowns, duality defect {:.1e}, max Peclet {:.3}", op.n_unknowns(), op.duality_defect(&gen, 0), op.peclet_max);

    let f = normalize(&solve_stationary(&op, 0.1)?)?;
    let m = f.mode();
    println!("mass {:.6}, mode ({:.4}, {:.4}), symmetry residual {:.1e}", f.mass(), m.y1, m.y3, f.symmetry_residual());

    let tail = f.heavy_tail(1.5, 3.5)?;
    println!("density over fitted Gaussian along y3=0 increasing on [1.5, 3.5]: {}", tail.increasing);

    println!("\n  y1     f(y1, 0)");
    for k in (0..grid.n).step_by(16) {
        let y1 = grid.coord(k);
        println!("{y1:+.2}  {:.5}", f.value(k, grid.n / 2));
    }
    Ok(())
}
