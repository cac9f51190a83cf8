//! The density process is a true martingale, and reweighting the forced
//! equation reproduces expectations of the autonomous one.

use blowuplab::dynamics::Params;
use blowuplab::girsanov::{check_moments, law_equivalence, theta_l2, TestFunction, ThetaSpec};
use blowuplab::integrate::IntegratorConfig;
use blowuplab::Complex64 as C;

fn main() -> blowuplab::Result<()> {
    let p = Params::unit();
    let w0 = C::new(1.0, 0.0);
    let spec = ThetaSpec::from_params(&p, w0, 1.0)?;
    println!("||theta||^2 on [0,2]: {:.5}, on [0,inf): {:.5}", theta_l2(&spec, 2.0), theta_l2(&spec, f64::INFINITY));

    let m = check_moments(&spec, 2.0, 10_000, 5)?;
    println!("E[M]   = {:.5} +- {:.5}", m.mean_m.value, m.mean_m.se);
    println!("E[M^2] = {:.5} +- {:.5} (closed form {:.5})", m.mean_m2.value, m.mean_m2.se, m.closed_form_m2);

    let cfg = IntegratorConfig { dt: 1e-3, ..Default::default() };
    let r = law_equivalence(C::new(0.0, 0.0), w0, &p, 1.0, 2.0, TestFunction::Gaussian, 5_000, 6, &cfg)?;
    println!(
        "E[f(z~) M] = {:.5}, E[f(z)] = {:.5}, unweighted E[f(z~)] = {:.5}",
        r.lhs.value, r.rhs.value, r.unweighted.value
    );
    Ok(())
}
