fn main() {
    std::process::exit(rclc::cli::run(std::env::args_os()));
}
