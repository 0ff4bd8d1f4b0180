//! Prints synthetic lab-format rows: `synth_lab [ROWS] [SEED]`.

use homesim::ingest::synthetic_lab_rows;

fn main() {
    let mut args = std::env::args().skip(1);
    let rows = args.next().map_or(1000, |a| a.parse().expect("ROWS is a count"));
    let seed = args.next().map_or(2004, |a| a.parse().expect("SEED is an integer"));
    print!("{}", synthetic_lab_rows(rows, seed));
}
