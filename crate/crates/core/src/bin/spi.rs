use std::io::stdout;

fn main() {
    let code = spi_core::cli::run_from_args(std::env::args_os(), &mut stdout().lock());
    std::process::exit(code);
}
