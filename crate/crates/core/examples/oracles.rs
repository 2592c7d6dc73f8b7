//! Runs each numerical oracle suite at a reduced size.

use xpr::checks;

fn main() -> xpr::Result<()> {
    println!("{}", checks::sparsemax_suite(1000, 1));
    println!("{}", checks::gradient_suite(10, 1)?);
    println!("{}", checks::em_mml_suite(5, 1)?);
    println!("{}", checks::kkt_suite(3, 200, 1)?);
    println!("{}", checks::rl_mml_suite(5, 1)?);
    let (partition, top1) = checks::beam_suite(200, 1)?;
    println!("{partition}");
    println!(
        "top-1 identical for widths 1/4/16 in {} of {} runs",
        top1.cases - top1.violations,
        top1.cases
    );
    Ok(())
}
