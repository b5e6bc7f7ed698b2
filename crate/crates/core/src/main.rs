fn main() {
    std::process::exit(fipo::cli::dispatch(std::env::args()));
}
