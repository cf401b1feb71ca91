// small-matrix churn in training otherwise spends a fifth of its time in page faults
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    std::process::exit(velab::harness::cli::main_with_args(std::env::args_os()));
}
