use std::io::Write;

use gspn::train::TrainReport;

/// `step,loss` rows with shortest round-trip formatting, so a fixed seed
/// always yields the same bytes.
pub fn write_trace<W: Write>(mut w: W, report: &TrainReport) -> std::io::Result<()> {
    writeln!(w, "step,loss")?;
    for (i, l) in report.losses.iter().enumerate() {
        writeln!(w, "{i},{l:?}")?;
    }
    Ok(())
}
