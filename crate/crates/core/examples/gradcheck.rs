//! Finite-difference verification of every differentiable op and the joint loss.
//!
//! ```text
//! cargo run --release --example gradcheck
//! ```

fn main() -> fdp::Result<()> {
    let outcomes = fdp::gradsuite::run_all()?;
    for o in &outcomes {
        println!("{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.passed()).count();
    println!("{} checks, {failed} failed", outcomes.len());
    if failed > 0 {
        std::process::exit(3);
    }
    Ok(())
}
