fn main() {
    soda_sr::numerics::tune_allocator();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    std::process::exit(soda_sr::cli::run(std::env::args_os()));
}
