//! Scan y1(0) along the real axis and compare the first explosive start with
//! the closed-form threshold, for both w-slices.

use blowuplab::dynamics::Params;
use blowuplab::integrate::{real_axis_threshold, Frame, IntegratorConfig};
use blowuplab::sweep::{boundary_agreement, empirical_thresholds, predicted_boundary, sweep_ode, Axis, BoundaryCase, GridSpec};

fn main() -> blowuplab::Result<()> {
    let p = Params::unit();
    let cfg = IntegratorConfig { dt: 1e-3, t_max: 20.0, ..Default::default() };
    let y1 = Axis { index: 1, min: 0.0, max: 3.0, step: 0.05 };

    // y2(0) = 0: a single line.
    let g = GridSpec::new(Frame::Y, [(3, 0.0), (4, 0.0)], [y1, Axis { index: 2, min: 0.0, max: 0.0, step: 1.0 }])?;
    let sr = sweep_ode(&g, &p, &cfg)?;
    let bp = predicted_boundary(&p, BoundaryCase::A, None)?;
    println!("y2=0: first explosive y1 {:?}, predicted {}", empirical_thresholds(&sr)?[0], bp.threshold);
    println!("  agreement {:?}", boundary_agreement(&sr, &bp)?);

    // y4(0) = 0: one line per y2(0).
    let y2 = Axis { index: 2, min: 0.0, max: 1.0, step: 0.25 };
    let g = GridSpec::new(Frame::Y, [(3, 0.0), (4, 0.0)], [y1, y2])?;
    let sr = sweep_ode(&g, &p, &cfg)?;
    for (k, found) in empirical_thresholds(&sr)?.into_iter().enumerate() {
        let y2_0 = y2.value(k);
        let sufficient = predicted_boundary(&p, BoundaryCase::B, Some(y2_0))?.threshold;
        let exact = real_axis_threshold(y2_0, 0.0, &p)?;
        println!("y2={y2_0:.2}: empirical {found:?}, exact {exact:.4}, sufficient bound {sufficient:.4}");
    }
    Ok(())
}
