fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(roadpaste::cli::LOG_ENV, "warn")).init();
    std::process::exit(roadpaste::cli::run(std::env::args_os()));
}
