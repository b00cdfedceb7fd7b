use std::time::Instant;

use crate::error::Result;

/// Median wall time, in seconds, of `runs` invocations of `f` after one
/// untimed warm-up call.
pub fn time_inference(mut f: impl FnMut() -> Result<()>, runs: usize) -> Result<f64> {
    f()?;
    let mut times = Vec::with_capacity(runs.max(1));
    for _ in 0..runs.max(1) {
        let start = Instant::now();
        f()?;
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(|a, b| a.total_cmp(b));
    let n = times.len();
    Ok(if n % 2 == 1 {
        times[n / 2]
    } else {
        0.5 * (times[n / 2 - 1] + times[n / 2])
    })
}
