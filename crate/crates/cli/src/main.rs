use clap::Parser;

use dof_cli::{run_batch, run_serve, Args};

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    if args.serve {
        return run_serve(&args);
    }
    let summary = run_batch(&args)?;
    eprintln!(
        "wrote {} frame(s); mean per-frame timings:\n{}",
        summary.images.len(),
        summary.mean_timings.table()
    );
    Ok(())
}
