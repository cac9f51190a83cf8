//! Survival fractions on one slice, with and without noise.

use blowuplab::dynamics::Params;
use blowuplab::integrate::{Frame, IntegratorConfig, Method, NoiseConfig};
use blowuplab::sweep::{sweep_ode, sweep_sde, Axis, GridSpec};

fn main() -> blowuplab::Result<()> {
    let p = Params::unit();
    let ax = |index| Axis { index, min: -3.0, max: 3.0, step: 1.0 };
    let g = GridSpec::new(Frame::Y, [(3, 0.0), (4, 0.0)], [ax(1), ax(2)])?;
    let cfg = IntegratorConfig { dt: 1e-2, t_max: 20.0, method: Method::ExactFlow, ..Default::default() };

    let det = sweep_ode(&g, &p, &cfg)?;
    println!("deterministic: {} of {} cells explode", det.explosions(), g.n_cells());

    for (name, noise) in [("im_z", NoiseConfig::ImZ), ("main_sde", NoiseConfig::MainSde { sigma: 1.0 })] {
        let sr = sweep_sde(&g, &p, &cfg, &noise, 50, 1)?;
        println!("{name}: min survival {:.3} over {} cells", sr.min_survival(), g.n_cells());
    }

    let (n1, n2) = g.dims();
    println!("\ndeterministic verdicts (rows y1, columns y2):");
    let s = det.survival();
    for i in 0..n1 {
        let row: String = (0..n2).map(|j| if s[i * n2 + j] == 1.0 { '.' } else { 'X' }).collect();
        println!("  y1={:+.1}  {row}", g.vary[0].value(i));
    }
    Ok(())
}
