//! Representation bias of an internal community mixture and the
//! chi-squared bound on it.

use ptlens::mixture::{self, InternalMixture, MixtureSpec};

fn main() -> ptlens::Result<()> {
    let m = MixtureSpec::new(&[(0.5, 0.1), (0.3, 0.4), (0.2, 0.8)])?;
    println!("f* = {:.4}", mixture::target_mean(&m));
    println!("V_hetero = {:.4}", mixture::v_hetero(&m));
    println!("single direct label MSE = {:.4}", mixture::total_spread(&m));

    println!("\n{:<18} {:>8} {:>8} {:>10} {:>10}", "internal q", "b_W", "chi2", "b_W^2", "bound");
    for q in [[0.5, 0.3, 0.2], [0.4, 0.3, 0.3], [0.3, 0.3, 0.4], [0.1, 0.3, 0.6]] {
        let q = InternalMixture::new(q.to_vec())?;
        let c = mixture::check_repr_bound(&m, &q)?;
        println!(
            "{:<18} {:>8.4} {:>8.4} {:>10.6} {:>10.6}",
            format!("{:?}", q.weights()),
            mixture::repr_bias(&m, &q)?,
            mixture::chi2_divergence(&q, &m)?,
            c.lhs,
            c.rhs
        );
    }

    // the bound is tight along q = w + lambda w (f - f*)
    let eq = mixture::equality_mixture(&m, 1.5)?;
    let c = mixture::check_repr_bound(&m, &eq)?;
    println!("\nequality mixture {:?}: slack {:.2e}", eq.weights(), c.slack);
    Ok(())
}
