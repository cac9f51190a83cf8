//! Occupation histograms of the forced and autonomous complex equations
//! approach the same limit.

use blowuplab::dynamics::Params;
use blowuplab::ergodic::{compare_measures, occupation_measure, time_average, Window};
use blowuplab::integrate::{integrate_z, integrate_ztilde, IntegratorConfig, Method};
use blowuplab::rng::RngStream;
use blowuplab::Complex64 as C;

fn main() -> blowuplab::Result<()> {
    let p = Params::unit();
    let cfg = IntegratorConfig { dt: 1e-2, t_max: 2e4, method: Method::ExactFlow, record_stride: 10, ..Default::default() };
    let window = Window::square(4.0);
    let z0 = C::new(0.0, 0.0);

    let forced = integrate_ztilde(z0, C::new(1.0, 0.0), &p, 1.0, &cfg, RngStream::new(1, 0))?;
    let free = integrate_z(z0, &p, 1.0, &cfg, RngStream::new(1, 1))?;
    let hf = occupation_measure(&forced, window, (24, 24), 100.0)?;
    let ha = occupation_measure(&free, window, (24, 24), 100.0)?;
    println!("L1(forced, autonomous) = {:.4}", compare_measures(&hf, &ha)?.l1);
    println!("outside mass: forced {:.4}, autonomous {:.4}", hf.outside_mass, ha.outside_mass);

    let f = |z: &C| z.re.atan();
    println!(
        "time averages of arctan(Re z): forced {:.4}, autonomous {:.4}",
        time_average(&forced, f, 100.0)?,
        time_average(&free, f, 100.0)?
    );
    Ok(())
}
