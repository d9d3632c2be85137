fn main() {
    std::process::exit(blursplat::run_cli());
}
