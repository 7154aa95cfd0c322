fn main() {
    std::process::exit(relpred::experiment::run(std::env::args_os()));
}
