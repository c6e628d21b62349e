use std::process;

fn main() {
    env_logger::init();
    process::exit(shiftbench::harness::cli(std::env::args()));
}
