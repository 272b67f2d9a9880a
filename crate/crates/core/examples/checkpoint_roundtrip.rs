//! Saves a pipeline as a directory of FTEN tensors and loads it back.

use flashocc::config::PipelineConfig;
use flashocc::pipeline::Pipeline;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("flashocc-ckpt-{}", std::process::id()));
    let p = Pipeline::build(&PipelineConfig::desk())?;
    p.save_checkpoint(&dir)?;
    let files = std::fs::read_dir(&dir)?.count();
    println!("wrote {files} files to {}", dir.display());

    let q = Pipeline::load_checkpoint(&dir)?;
    let same = p
        .collect()
        .entries
        .iter()
        .zip(&q.collect().entries)
        .all(|((na, a), (nb, b))| na == nb && a == b);
    println!("{} parameters, identical after reload: {same}", q.parameter_count());
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
