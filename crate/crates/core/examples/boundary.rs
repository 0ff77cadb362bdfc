//! Exact help-harm crossings for the deterministic-limit model under the
//! (1, 3) rule, compared with the leading-order law.

use helpharm::boundary::auto_window;
use helpharm::mse::exact_curve;
use helpharm::{find_crossing, fit_loglog, theoretical_boundary_spec, DeterministicLimitBinary, Spec};

fn main() -> helpharm::Result<()> {
    let model = DeterministicLimitBinary::new(1.0)?;
    let rule = Spec::uniform(&[1.0, 3.0])?;
    let theory = theoretical_boundary_spec(&model, &rule)?;
    println!("{}", theory.verdict());

    let mut crossings = Vec::new();
    for budget in [1e4, 1e5, 1e6, 1e7] {
        let grid = auto_window(&theory, budget, 0.5, 2.0, 200)?;
        let curve = exact_curve(&model, Some(&rule), budget, &grid)?;
        let c = find_crossing(&curve.points)?;
        println!(
            "B = {budget:>8.0e}  eps* = {:.6e}  leading order {:.6e}",
            c.eps_star.unwrap_or(f64::NAN),
            theory.predicted_crossing(budget).unwrap()
        );
        crossings.push(c);
    }
    let fit = fit_loglog(&crossings)?;
    println!("slope {:.4}, C_fit {:.4}", fit.slope, fit.c_fit());
    Ok(())
}
