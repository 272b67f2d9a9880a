//! Benchmarks flash against voxel heads on the desk config.

use flashocc::bench::{bench, BenchOptions};
use flashocc::config::PipelineConfig;

fn main() -> flashocc::Result<()> {
    let opts = BenchOptions {
        warmup: 2,
        iters: 10,
        ..BenchOptions::default()
    };
    let report = bench(&PipelineConfig::desk(), &opts)?;
    for (path, a) in &report.analysis.paths {
        let t = &report.timing.paths[path].wall;
        println!(
            "{path:>5}: {:>12} FLOPs, peak {:>9} B, median {:.3} ms",
            a.total_flops,
            a.peak_tensor_bytes,
            t.median * 1e3
        );
    }
    println!("FLOPs ratio {:?}", report.analysis.flops_ratio);
    println!("memory ratio {:?}", report.analysis.memory_ratio);
    println!("speedup {:?}", report.timing.speedup);
    Ok(())
}
