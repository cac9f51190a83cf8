//! One start on the explosive side of the real axis, integrated with and
//! without noise.

use blowuplab::dynamics::{Params, StateY};
use blowuplab::integrate::{integrate_ode, integrate_sde, riccati_oracle, IntegratorConfig, NoiseConfig};
use blowuplab::rng::RngStream;

fn main() -> blowuplab::Result<()> {
    let p = Params::unit();
    let y0 = StateY::new(2.0, 0.0, 0.0, 0.0)?;
    let cfg = IntegratorConfig { dt: 1e-4, t_max: 20.0, ..Default::default() };

    let ode = integrate_ode(y0, &p, &cfg)?;
    println!("ODE: {:?}; exact {:?}", ode.verdict, riccati_oracle(2.0, 1.0, 1.0, 0.0)?);

    let cfg = IntegratorConfig { dt: 1e-3, record_stride: 1000, ..cfg };
    for seed in 0..5 {
        let tr = integrate_sde(y0, &p, &cfg, &NoiseConfig::MainSde { sigma: 1.0 }, RngStream::new(seed, 0))?;
        let last = tr.last_state().copied().unwrap_or_default();
        println!("SDE seed {seed}: {:?}, y(t_max) = {last:+.3?}", tr.verdict);
    }
    Ok(())
}
