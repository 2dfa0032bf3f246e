use std::io::Write;

fn main() -> anyhow::Result<()> {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    let code = chemostokes::cli::execute(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock());
    std::io::stdout().flush()?;
    std::process::exit(code)
}
