use rrt_cli::CliError;

fn main() {
    match rrt_cli::run(std::env::args_os()) {
        Ok(()) => {}
        Err(CliError::Usage(e)) => e.exit(),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
