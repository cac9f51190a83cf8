//! Coordinate change, fixed points and their linearizations.

use blowuplab::dynamics::{drift_x, fixed_points, linearize, to_x, to_y, FixedPoint, Params, StateX};

fn main() -> blowuplab::Result<()> {
    let p = Params::new(0.8, 1.5, -0.5)?;
    let x = StateX::new(0.3, -1.2, 0.7, 2.0)?;
    let back = to_x(&to_y(&x, &p), &p);
    println!("x = {:?}\nL^-1 L x = {:?}", x.to_array(), back.to_array());

    let (o, s) = fixed_points(&p);
    println!("origin drift {:?}", drift_x(&o, &p));
    println!("second fixed point {:?}, drift {:?}", s.to_array(), drift_x(&s, &p));

    for which in [FixedPoint::Origin, FixedPoint::Saddle] {
        let lin = linearize(&p, which);
        println!("\n{which:?}: eigenvalues {:?}, residual {:.1e}", lin.eigenvalues, lin.max_residual());
        for (lam, v) in lin.eigenvalues.iter().zip(lin.normalized_eigenvectors()) {
            println!("  {lam:+.3}  {v:+.4?}");
        }
    }
    Ok(())
}
