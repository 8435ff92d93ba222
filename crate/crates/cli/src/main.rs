use clap::Parser;

fn main() {
    let cli = match lmih_cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors must not collide with the infeasible exit code
            std::process::exit(if e.use_stderr() { lmih_cli::EXIT_ERROR } else { lmih_cli::EXIT_OK });
        }
    };
    std::process::exit(lmih_cli::run(&cli));
}
