use clap::Parser;
use geoseg::cli::{run, Cli, Validation};
use std::process::ExitCode;

// training allocates large short-lived buffers; the system allocator maps and
// unmaps them on every step
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Validation>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<geoseg_core::Error>() {
            use geoseg_core::Error as E;
            if matches!(
                e,
                E::Shape(_)
                    | E::Config(_)
                    | E::Invalid(_)
                    | E::OutOfBounds(_)
                    | E::EmptySeeds
                    | E::Format(_)
            ) {
                return 2;
            }
        }
    }
    1
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
