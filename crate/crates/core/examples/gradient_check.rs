//! Finite-difference checks of every layer and of a tiny two-stream model.

use ts3dcnn::gradsuite::run_suite;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let reports = run_suite(seed)?;
    for r in &reports {
        println!("{r}");
    }
    let failed = reports.iter().filter(|r| !r.pass).count();
    println!("{} of {} checks pass", reports.len() - failed, reports.len());
    Ok(())
}
