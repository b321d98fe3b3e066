use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("REMS_LOG_LEVEL", "warn"))
        .init();
    let cli = rems::cli::Cli::parse();
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    if let Err(e) = ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)) {
        log::warn!("interrupt handler not installed: {e}");
    }
    std::process::exit(rems::cli::main_with(cli, stop));
}
