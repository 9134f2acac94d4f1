use std::io::Write;

fn main() {
    let outcome = powersym_cli::run(std::env::args_os());
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(outcome.stdout.as_bytes());
    let _ = out.flush();
    eprint!("{}", outcome.stderr);
    std::process::exit(outcome.code);
}
