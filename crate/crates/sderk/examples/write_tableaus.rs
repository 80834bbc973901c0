//! Regenerates the shipped tableau data files from the builtin
//! constructors. Run from the workspace root.

use sderk::tableau::ButcherTableau;

fn main() {
    for (file, tab) in [
        ("tableaus/rk4.tab", ButcherTableau::classic_rk4()),
        ("tableaus/dp54.tab", ButcherTableau::dormand_prince_54()),
        ("tableaus/rkf87.tab", ButcherTableau::fehlberg_87()),
        ("tableaus/xrkf98.tab", ButcherTableau::extrapolated_98()),
    ] {
        std::fs::write(file, tab.serialize()).unwrap();
        println!("wrote {file}");
    }
}
