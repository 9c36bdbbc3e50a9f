fn main() {
    std::process::exit(portdrift::service::cli::main());
}
