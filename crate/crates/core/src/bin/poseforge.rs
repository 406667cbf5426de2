fn main() {
    std::process::exit(poseforge::cli::main_with_args(std::env::args_os()));
}
