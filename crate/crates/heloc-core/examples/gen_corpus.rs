fn main() {
    let dir = std::env::args().nth(1).unwrap();
    let seed: u64 = std::env::args().nth(2).unwrap().parse().unwrap();
    let count: usize = std::env::args().nth(3).unwrap().parse().unwrap();
    std::fs::create_dir_all(&dir).unwrap();
    for (i, src) in heloc_core::synth::random_corpus(seed, count).iter().enumerate() {
        std::fs::write(format!("{dir}/g{i:03}.dl"), src).unwrap();
    }
}
