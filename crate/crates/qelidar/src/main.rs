use std::process::ExitCode;

fn main() -> ExitCode {
    match qelidar::cli::run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // clap handles --help/--version through errors with exit code 0
            if let Some(e) = err.downcast_ref::<clap::Error>() {
                let _ = e.print();
                return if e.use_stderr() {
                    ExitCode::from(2)
                } else {
                    ExitCode::SUCCESS
                };
            }
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
