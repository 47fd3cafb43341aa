//! File formats for streams, histograms, curves, spectra, and mode maps.
//!
//! Timestamp streams travel either as CSV (`channel,timestamp_ps`, one row
//! per click, optionally preceded by `#` comments) or as a compact binary
//! record per channel: a 16-byte header holding the magic `PHST`, a format
//! version, the channel id, and the click count, followed by the
//! little-endian 64-bit picosecond stamps. The two forms interconvert
//! losslessly.
//!
//! Everything else is plot-ready CSV with a `#`-commented metadata header:
//! histograms carry their bin grid so they reconstruct exactly, curves
//! carry the tail normalization, traces and spectra are plain columns, and
//! mode-structure maps export as a frequency-by-segment matrix plus a
//! band-track table.

use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use crate::correlator::{
    BinGrid, CorrelationCurve, CorrelationHistogram, PairMode, StreamSummary,
};
use crate::error::{Error, Result};
use crate::g2::CorrectionResult;
use crate::spectrum::{Spectrum, TransmissionTrace};
use crate::synth::PhotonStream;
use crate::wgm::ModeStructureMap;

/// Leading bytes of every binary stream file.
pub const STREAM_MAGIC: [u8; 4] = *b"PHST";
/// Current binary stream format version.
pub const STREAM_VERSION: u16 = 1;

const PS_PER_NS: f64 = 1_000.0;

fn format_error(path: &Path, line: usize, what: impl std::fmt::Display) -> Error {
    Error::Format(format!("{}:{line}: {what}", path.display()))
}

/// Writes one channel's stream in the binary format.
pub fn write_stream_binary(path: impl AsRef<Path>, stream: &PhotonStream) -> Result<()> {
    let file = fs::File::create(path.as_ref())?;
    let mut out = BufWriter::new(file);
    out.write_all(&STREAM_MAGIC)?;
    out.write_all(&STREAM_VERSION.to_le_bytes())?;
    out.write_all(&stream.channel_id().to_le_bytes())?;
    out.write_all(&(stream.len() as u64).to_le_bytes())?;
    for &t in stream.timestamps() {
        out.write_all(&t.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a binary stream file. The format stores only the stamps, so the
/// stream duration is reconstructed as one past the last stamp.
pub fn read_stream_binary(path: impl AsRef<Path>) -> Result<PhotonStream> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    if bytes.len() < 16 {
        return Err(Error::Corrupt {
            offset: bytes.len() as u64,
            reason: format!("header needs 16 bytes, file has {}", bytes.len()),
        });
    }
    if bytes[..4] != STREAM_MAGIC {
        return Err(Error::Format(format!(
            "{} is not a photon stream file (magic {:?})",
            path.display(),
            &bytes[..4]
        )));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != STREAM_VERSION {
        return Err(Error::Format(format!(
            "unsupported stream format version {version}, expected {STREAM_VERSION}"
        )));
    }
    let channel = u16::from_le_bytes([bytes[6], bytes[7]]);
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let expected = 16 + 8 * count;
    if (bytes.len() as u64) < expected {
        return Err(Error::Corrupt {
            offset: bytes.len() as u64,
            reason: format!(
                "header promises {count} stamps ({expected} bytes), file ends early"
            ),
        });
    }
    if bytes.len() as u64 > expected {
        return Err(Error::Corrupt {
            offset: expected,
            reason: format!("{} trailing bytes after the last stamp", bytes.len() as u64 - expected),
        });
    }
    let timestamps: Vec<u64> = bytes[16..]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let duration = timestamps.last().map_or(0, |&t| t + 1);
    let mut stream = PhotonStream::new(channel, timestamps, duration)?;
    stream.metadata.source = format!("read {}", path.display());
    Ok(stream)
}

/// Writes any number of streams as one CSV with a shared clock. A
/// `duration_ps` comment preserves the recording length across the
/// roundtrip.
pub fn write_streams_csv(path: impl AsRef<Path>, streams: &[&PhotonStream]) -> Result<()> {
    let file = fs::File::create(path.as_ref())?;
    let mut out = BufWriter::new(file);
    let duration = streams.iter().map(|s| s.duration_ps()).max().unwrap_or(0);
    writeln!(out, "# duration_ps={duration}")?;
    writeln!(out, "channel,timestamp_ps")?;
    for stream in streams {
        for &t in stream.timestamps() {
            writeln!(out, "{},{t}", stream.channel_id())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a stream CSV, returning one stream per channel in order of first
/// appearance. Timestamps must be strictly increasing within a channel.
pub fn read_streams_csv(path: impl AsRef<Path>) -> Result<Vec<PhotonStream>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut duration_hint: Option<u64> = None;
    let mut channels: Vec<(u16, Vec<u64>)> = Vec::new();
    let mut saw_header = false;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(value) = comment.trim().strip_prefix("duration_ps=") {
                duration_hint = Some(
                    value
                        .trim()
                        .parse()
                        .map_err(|e| format_error(path, line_no, e))?,
                );
            }
            continue;
        }
        if !saw_header {
            if line != "channel,timestamp_ps" {
                return Err(format_error(
                    path,
                    line_no,
                    format!("expected header 'channel,timestamp_ps', found '{line}'"),
                ));
            }
            saw_header = true;
            continue;
        }
        let (channel, stamp) = line.split_once(',').ok_or_else(|| {
            format_error(path, line_no, "expected 'channel,timestamp_ps' row")
        })?;
        let channel: u16 = channel
            .trim()
            .parse()
            .map_err(|e| format_error(path, line_no, format!("bad channel: {e}")))?;
        let stamp: u64 = stamp
            .trim()
            .parse()
            .map_err(|e| format_error(path, line_no, format!("bad timestamp: {e}")))?;
        match channels.iter_mut().find(|(c, _)| *c == channel) {
            Some((_, stamps)) => stamps.push(stamp),
            None => channels.push((channel, vec![stamp])),
        }
    }
    if !saw_header {
        return Err(format_error(path, 1, "missing 'channel,timestamp_ps' header"));
    }
    let last = channels
        .iter()
        .filter_map(|(_, stamps)| stamps.last().copied())
        .max();
    let duration = duration_hint.unwrap_or_else(|| last.map_or(0, |t| t + 1));
    channels
        .into_iter()
        .map(|(channel, stamps)| {
            let mut stream = PhotonStream::new(channel, stamps, duration)?;
            stream.metadata.source = format!("read {}", path.display());
            Ok(stream)
        })
        .collect()
}

/// Stable text name of a pair-counting mode, as written to file headers.
pub fn mode_name(mode: PairMode) -> &'static str {
    match mode {
        PairMode::AllPairs => "all-pairs",
        PairMode::StartStop => "start-stop",
    }
}

fn parse_mode(name: &str) -> Result<PairMode> {
    match name {
        "all-pairs" => Ok(PairMode::AllPairs),
        "start-stop" => Ok(PairMode::StartStop),
        other => Err(Error::Format(format!("unknown pair mode '{other}'"))),
    }
}

fn write_summary(out: &mut impl std::io::Write, label: &str, s: &StreamSummary) -> Result<()> {
    writeln!(out, "# {label}_channel={}", s.channel_id)?;
    writeln!(out, "# {label}_events={}", s.events)?;
    writeln!(out, "# {label}_duration_ps={}", s.duration_ps)?;
    Ok(())
}

/// Writes a histogram with its full bin grid in the comment header, so
/// [`read_histogram_csv`] reconstructs it exactly. Rows are
/// `lag_bin_center_ns,counts`, with a third `corrected` column when the
/// histogram carries envelope-corrected counts.
pub fn write_histogram_csv(path: impl AsRef<Path>, histogram: &CorrelationHistogram) -> Result<()> {
    let file = fs::File::create(path.as_ref())?;
    let mut out = BufWriter::new(file);
    writeln!(out, "# photonstat histogram")?;
    writeln!(out, "# mode={}", mode_name(histogram.mode()))?;
    match histogram.grid() {
        BinGrid::Lag {
            bin_width_ps,
            window_ps,
        } => {
            writeln!(out, "# grid=lag")?;
            writeln!(out, "# bin_width_ps={bin_width_ps}")?;
            writeln!(out, "# window_ps={window_ps}")?;
        }
        BinGrid::Period {
            delta_t_ps,
            period_count,
        } => {
            writeln!(out, "# grid=period")?;
            writeln!(out, "# delta_t_ps={delta_t_ps}")?;
            writeln!(out, "# period_count={period_count}")?;
        }
    }
    write_summary(&mut out, "source_a", &histogram.source_a)?;
    write_summary(&mut out, "source_b", &histogram.source_b)?;
    let grid = histogram.grid();
    match histogram.corrected() {
        Some(corrected) => {
            writeln!(out, "lag_bin_center_ns,counts,corrected")?;
            for (k, (&count, &value)) in histogram.counts().iter().zip(corrected).enumerate() {
                writeln!(out, "{},{count},{value}", grid.bin_center_ps(k) / PS_PER_NS)?;
            }
        }
        None => {
            writeln!(out, "lag_bin_center_ns,counts")?;
            for (k, &count) in histogram.counts().iter().enumerate() {
                writeln!(out, "{},{count}", grid.bin_center_ps(k) / PS_PER_NS)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

struct CommentTable {
    keys: Vec<(String, String)>,
}

impl CommentTable {
    fn get(&self, key: &str) -> Option<&str> {
        self.keys
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn require(&self, path: &Path, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| {
            Error::Format(format!("{}: missing '# {key}=' header", path.display()))
        })
    }

    fn parse<T: std::str::FromStr>(&self, path: &Path, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.require(path, key)?.parse().map_err(|e| {
            Error::Format(format!("{}: bad '# {key}=' value: {e}", path.display()))
        })
    }
}

/// Splits a commented CSV into its `# key=value` table and data lines
/// (1-based line number, content), the first data line being the column
/// header.
fn split_comments(text: &str) -> (CommentTable, Vec<(usize, &str)>) {
    let mut keys = Vec::new();
    let mut data = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((k, v)) = comment.trim().split_once('=') {
                keys.push((k.trim().to_string(), v.trim().to_string()));
            }
            continue;
        }
        data.push((i + 1, line));
    }
    (CommentTable { keys }, data)
}

fn read_summary(table: &CommentTable, path: &Path, label: &str) -> Result<StreamSummary> {
    Ok(StreamSummary {
        channel_id: table.parse(path, &format!("{label}_channel"))?,
        events: table.parse(path, &format!("{label}_events"))?,
        duration_ps: table.parse(path, &format!("{label}_duration_ps"))?,
    })
}

/// Reads a histogram written by [`write_histogram_csv`]. Bin centers are
/// recomputed from the stored grid, so the roundtrip is exact.
pub fn read_histogram_csv(path: impl AsRef<Path>) -> Result<CorrelationHistogram> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let (table, data) = split_comments(&text);
    let mode = parse_mode(table.require(path, "mode")?)?;
    let grid = match table.require(path, "grid")? {
        "lag" => BinGrid::Lag {
            bin_width_ps: table.parse(path, "bin_width_ps")?,
            window_ps: table.parse(path, "window_ps")?,
        },
        "period" => BinGrid::Period {
            delta_t_ps: table.parse(path, "delta_t_ps")?,
            period_count: table.parse(path, "period_count")?,
        },
        other => {
            return Err(Error::Format(format!(
                "{}: unknown grid kind '{other}'",
                path.display()
            )))
        }
    };
    let source_a = read_summary(&table, path, "source_a")?;
    let source_b = read_summary(&table, path, "source_b")?;
    let Some(((_, header), rows)) = data.split_first() else {
        return Err(Error::Format(format!("{}: no column header", path.display())));
    };
    let has_corrected = match *header {
        "lag_bin_center_ns,counts" => false,
        "lag_bin_center_ns,counts,corrected" => true,
        other => {
            return Err(Error::Format(format!(
                "{}: unexpected column header '{other}'",
                path.display()
            )))
        }
    };
    let mut counts = Vec::with_capacity(rows.len());
    let mut corrected = Vec::with_capacity(if has_corrected { rows.len() } else { 0 });
    for &(line_no, row) in rows {
        let mut fields = row.split(',');
        let _center = fields
            .next()
            .ok_or_else(|| format_error(path, line_no, "empty row"))?;
        let count: u64 = fields
            .next()
            .ok_or_else(|| format_error(path, line_no, "missing counts column"))?
            .trim()
            .parse()
            .map_err(|e| format_error(path, line_no, format!("bad counts: {e}")))?;
        counts.push(count);
        if has_corrected {
            let value: f64 = fields
                .next()
                .ok_or_else(|| format_error(path, line_no, "missing corrected column"))?
                .trim()
                .parse()
                .map_err(|e| format_error(path, line_no, format!("bad corrected value: {e}")))?;
            corrected.push(value);
        }
    }
    let histogram = CorrelationHistogram::from_parts(grid, mode, counts, source_a, source_b)?;
    if has_corrected {
        histogram.with_corrected(corrected)
    } else {
        Ok(histogram)
    }
}

/// Writes a normalized correlation curve as
/// `lag_bin_center_ns,g2,sigma` with the tail-normalization constant in
/// the header.
pub fn write_curve_csv(path: impl AsRef<Path>, curve: &CorrelationCurve) -> Result<()> {
    let file = fs::File::create(path.as_ref())?;
    let mut out = BufWriter::new(file);
    writeln!(out, "# photonstat correlation curve")?;
    writeln!(out, "# normalization={}", curve.normalization)?;
    writeln!(out, "lag_bin_center_ns,g2,sigma")?;
    for ((&lag, &g2), &sigma) in curve.lag_ps.iter().zip(&curve.g2).zip(&curve.sigma) {
        writeln!(out, "{},{g2},{sigma}", lag / PS_PER_NS)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a curve written by [`write_curve_csv`].
pub fn read_curve_csv(path: impl AsRef<Path>) -> Result<CorrelationCurve> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let (table, data) = split_comments(&text);
    let normalization: f64 = table.parse(path, "normalization")?;
    let Some(((header_line, header), rows)) = data.split_first() else {
        return Err(Error::Format(format!("{}: no column header", path.display())));
    };
    if *header != "lag_bin_center_ns,g2,sigma" {
        return Err(format_error(
            path,
            *header_line,
            format!("expected header 'lag_bin_center_ns,g2,sigma', found '{header}'"),
        ));
    }
    let mut lag_ps = Vec::with_capacity(rows.len());
    let mut g2 = Vec::with_capacity(rows.len());
    let mut sigma = Vec::with_capacity(rows.len());
    for &(line_no, row) in rows {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 3 {
            return Err(format_error(path, line_no, "expected 3 columns"));
        }
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|e| format_error(path, line_no, format!("bad {what}: {e}")))
        };
        lag_ps.push(parse(fields[0], "lag")? * PS_PER_NS);
        g2.push(parse(fields[1], "g2")?);
        sigma.push(parse(fields[2], "sigma")?);
    }
    Ok(CorrelationCurve {
        lag_ps,
        g2,
        sigma,
        normalization,
    })
}

/// Writes the flat key=value correction report.
pub fn write_correction_report(path: impl AsRef<Path>, result: &CorrectionResult) -> Result<()> {
    fs::write(path.as_ref(), result.report())?;
    Ok(())
}

/// Writes the corrected curve with its inputs:
/// `lag_bin_center_ns,g2_ab,g2_b,g2_a,delta_g2_a`.
pub fn write_correction_csv(path: impl AsRef<Path>, result: &CorrectionResult) -> Result<()> {
    let file = fs::File::create(path.as_ref())?;
    let mut out = BufWriter::new(file);
    writeln!(out, "# photonstat background correction")?;
    writeln!(out, "# a={}", result.mix.a())?;
    writeln!(out, "# b={}", result.mix.b())?;
    writeln!(out, "lag_bin_center_ns,g2_ab,g2_b,g2_a,delta_g2_a")?;
    for i in 0..result.lag_ps.len() {
        writeln!(
            out,
            "{},{},{},{},{}",
            result.lag_ps[i] / PS_PER_NS,
            result.g2_ab[i],
            result.g2_b[i],
            result.g2_a[i],
            result.delta_g2_a[i]
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `wavelength_nm,intensity` rows.
pub fn write_spectrum_csv(path: impl AsRef<Path>, spectrum: &Spectrum) -> Result<()> {
    let file = fs::File::create(path.as_ref())?;
    let mut out = BufWriter::new(file);
    writeln!(out, "wavelength_nm,intensity")?;
    for (&l, &v) in spectrum.wavelength_nm.iter().zip(&spectrum.intensity) {
        writeln!(out, "{l},{v}")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a spectrum written by [`write_spectrum_csv`].
pub fn read_spectrum_csv(path: impl AsRef<Path>) -> Result<Spectrum> {
    let path = path.as_ref();
    let (grid, columns) = read_grid_columns(path, "wavelength_nm,intensity", 1)?;
    let [intensity] = <[Vec<f64>; 1]>::try_from(columns).unwrap();
    Spectrum::new(grid, intensity)
}

/// Writes `wavelength_nm,transmission` rows, with a third `reference`
/// column when the trace carries its reference scan.
pub fn write_trace_csv(path: impl AsRef<Path>, trace: &TransmissionTrace) -> Result<()> {
    let file = fs::File::create(path.as_ref())?;
    let mut out = BufWriter::new(file);
    match &trace.reference {
        Some(reference) => {
            writeln!(out, "wavelength_nm,transmission,reference")?;
            for ((&l, &t), &r) in trace
                .wavelength_nm
                .iter()
                .zip(&trace.transmission)
                .zip(reference)
            {
                writeln!(out, "{l},{t},{r}")?;
            }
        }
        None => {
            writeln!(out, "wavelength_nm,transmission")?;
            for (&l, &t) in trace.wavelength_nm.iter().zip(&trace.transmission) {
                writeln!(out, "{l},{t}")?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a trace written by [`write_trace_csv`], with or without the
/// reference column.
pub fn read_trace_csv(path: impl AsRef<Path>) -> Result<TransmissionTrace> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let (_, data) = split_comments(&text);
    let Some(((_, header), _)) = data.split_first() else {
        return Err(Error::Format(format!("{}: no column header", path.display())));
    };
    match *header {
        "wavelength_nm,transmission" => {
            let (grid, columns) = read_grid_columns(path, "wavelength_nm,transmission", 1)?;
            let [transmission] = <[Vec<f64>; 1]>::try_from(columns).unwrap();
            TransmissionTrace::new(grid, transmission)
        }
        "wavelength_nm,transmission,reference" => {
            let (grid, columns) =
                read_grid_columns(path, "wavelength_nm,transmission,reference", 2)?;
            let [transmission, reference] = <[Vec<f64>; 2]>::try_from(columns).unwrap();
            TransmissionTrace::new(grid, transmission)?.with_reference(reference)
        }
        other => Err(Error::Format(format!(
            "{}: unexpected column header '{other}'",
            path.display()
        ))),
    }
}

/// Shared reader for `grid,value[,value...]` CSVs with an exact header.
fn read_grid_columns(
    path: &Path,
    expected_header: &str,
    value_columns: usize,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path)?;
    let (_, data) = split_comments(&text);
    let Some(((header_line, header), rows)) = data.split_first() else {
        return Err(Error::Format(format!("{}: no column header", path.display())));
    };
    if *header != expected_header {
        return Err(format_error(
            path,
            *header_line,
            format!("expected header '{expected_header}', found '{header}'"),
        ));
    }
    let mut grid = Vec::with_capacity(rows.len());
    let mut columns = vec![Vec::with_capacity(rows.len()); value_columns];
    for &(line_no, row) in rows {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != value_columns + 1 {
            return Err(format_error(
                path,
                line_no,
                format!("expected {} columns", value_columns + 1),
            ));
        }
        let mut parsed = fields.iter().map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| format_error(path, line_no, e))
        });
        grid.push(parsed.next().unwrap()?);
        for column in &mut columns {
            column.push(parsed.next().unwrap()?);
        }
    }
    Ok((grid, columns))
}

/// Writes the mode map as a matrix: one row per frequency bin, one column
/// per segment (labeled by its center wavelength), amplitudes normalized
/// per segment.
pub fn write_mode_map_csv(path: impl AsRef<Path>, map: &ModeStructureMap) -> Result<()> {
    let file = fs::File::create(path.as_ref())?;
    let mut out = BufWriter::new(file);
    writeln!(out, "# photonstat mode structure map")?;
    write!(out, "frequency_inv_nm")?;
    for &center in &map.segment_center_nm {
        write!(out, ",{center}")?;
    }
    writeln!(out)?;
    for (k, &f) in map.frequency_inv_nm.iter().enumerate() {
        write!(out, "{f}")?;
        for row in &map.amplitude {
            write!(out, ",{}", row[k])?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes the detected band tracks as
/// `segment_center_nm,track_order,frequency_inv_nm` rows.
pub fn write_band_tracks_csv(path: impl AsRef<Path>, map: &ModeStructureMap) -> Result<()> {
    let file = fs::File::create(path.as_ref())?;
    let mut out = BufWriter::new(file);
    writeln!(out, "segment_center_nm,track_order,frequency_inv_nm")?;
    for track in &map.tracks {
        for (&center, &f) in track.segment_center_nm.iter().zip(&track.frequency_inv_nm) {
            writeln!(out, "{center},{},{f}", track.order)?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlator::{cross_correlate, normalize};
    use std::path::PathBuf;

    struct TempFile(PathBuf);

    impl TempFile {
        fn new(name: &str) -> Self {
            let path = std::env::temp_dir().join(format!(
                "photonstat-io-{}-{name}",
                std::process::id()
            ));
            Self(path)
        }

        fn path(&self) -> &Path {
            &self.0
        }
    }

    impl Drop for TempFile {
        fn drop(&mut self) {
            let _ = fs::remove_file(&self.0);
        }
    }

    fn sample_stream(channel: u16) -> PhotonStream {
        let stamps: Vec<u64> = (0..500u64)
            .map(|i| i * 997 + (i * i) % 391 + channel as u64)
            .scan(0u64, |last, t| {
                let t = t.max(*last + 1);
                *last = t;
                Some(t)
            })
            .collect();
        PhotonStream::new(channel, stamps, 600_000).unwrap()
    }

    #[test]
    fn binary_roundtrip_preserves_stamps_and_channel() {
        let stream = sample_stream(3);
        let file = TempFile::new("bin-roundtrip.phst");
        write_stream_binary(file.path(), &stream).unwrap();
        let back = read_stream_binary(file.path()).unwrap();
        assert_eq!(back.channel_id(), 3);
        assert_eq!(back.timestamps(), stream.timestamps());
    }

    #[test]
    fn truncated_binary_names_the_byte_offset() {
        let stream = sample_stream(0);
        let file = TempFile::new("bin-truncated.phst");
        write_stream_binary(file.path(), &stream).unwrap();
        let full = fs::read(file.path()).unwrap();
        let cut = full.len() - 5;
        fs::write(file.path(), &full[..cut]).unwrap();
        match read_stream_binary(file.path()) {
            Err(Error::Corrupt { offset, .. }) => assert_eq!(offset, cut as u64),
            other => panic!("expected corruption error, got {other:?}"),
        }
        fs::write(file.path(), &full[..10]).unwrap();
        match read_stream_binary(file.path()) {
            Err(Error::Corrupt { offset, .. }) => assert_eq!(offset, 10),
            other => panic!("expected corruption error, got {other:?}"),
        }
    }

    #[test]
    fn foreign_and_mismatched_headers_are_rejected() {
        let file = TempFile::new("bin-magic.phst");
        fs::write(file.path(), b"NOPE\x01\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00").unwrap();
        assert!(matches!(
            read_stream_binary(file.path()),
            Err(Error::Format(_))
        ));
        let mut header = Vec::new();
        header.extend_from_slice(&STREAM_MAGIC);
        header.extend_from_slice(&9u16.to_le_bytes());
        header.extend_from_slice(&0u16.to_le_bytes());
        header.extend_from_slice(&0u64.to_le_bytes());
        fs::write(file.path(), &header).unwrap();
        assert!(matches!(
            read_stream_binary(file.path()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn csv_roundtrip_preserves_both_channels_and_duration() {
        let a = sample_stream(0);
        let b = sample_stream(1);
        let file = TempFile::new("streams.csv");
        write_streams_csv(file.path(), &[&a, &b]).unwrap();
        let back = read_streams_csv(file.path()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].timestamps(), a.timestamps());
        assert_eq!(back[1].timestamps(), b.timestamps());
        assert_eq!(back[0].duration_ps(), 600_000);
    }

    #[test]
    fn csv_and_binary_interconvert_losslessly() {
        let stream = sample_stream(7);
        let csv = TempFile::new("convert.csv");
        let bin = TempFile::new("convert.phst");
        write_streams_csv(csv.path(), &[&stream]).unwrap();
        let from_csv = read_streams_csv(csv.path()).unwrap().remove(0);
        write_stream_binary(bin.path(), &from_csv).unwrap();
        let from_bin = read_stream_binary(bin.path()).unwrap();
        assert_eq!(from_bin.timestamps(), stream.timestamps());
        assert_eq!(from_bin.channel_id(), stream.channel_id());
    }

    #[test]
    fn nonmonotonic_csv_timestamps_are_rejected() {
        let file = TempFile::new("unsorted.csv");
        fs::write(
            file.path(),
            "channel,timestamp_ps\n0,100\n0,90\n",
        )
        .unwrap();
        assert!(matches!(
            read_streams_csv(file.path()),
            Err(Error::UnsortedTimestamps { .. })
        ));
        fs::write(file.path(), "0,100\n").unwrap();
        assert!(matches!(read_streams_csv(file.path()), Err(Error::Format(_))));
    }

    fn toy_histogram() -> CorrelationHistogram {
        let a = PhotonStream::new(0, vec![100, 5_000, 9_000, 13_000], 20_000).unwrap();
        let b = PhotonStream::new(1, vec![600, 5_400, 11_000, 17_000], 20_000).unwrap();
        cross_correlate(&a, &b, 1_000, 8_000, PairMode::AllPairs).unwrap()
    }

    #[test]
    fn histogram_roundtrip_is_exact() {
        let histogram = toy_histogram();
        let file = TempFile::new("histogram.csv");
        write_histogram_csv(file.path(), &histogram).unwrap();
        let back = read_histogram_csv(file.path()).unwrap();
        assert_eq!(back, histogram);
    }

    #[test]
    fn corrected_and_period_histograms_roundtrip() {
        let source = StreamSummary {
            channel_id: 4,
            events: 77,
            duration_ps: 1_000_000,
        };
        let grid = BinGrid::Period {
            delta_t_ps: 25_000,
            period_count: 3,
        };
        let histogram = CorrelationHistogram::from_parts(
            grid,
            PairMode::StartStop,
            vec![1, 2, 3, 4, 5, 6, 7],
            source.clone(),
            source,
        )
        .unwrap()
        .with_corrected(vec![1.5, 2.25, 3.125, 4.0625, 5.5, 6.75, 7.875])
        .unwrap();
        let file = TempFile::new("period-histogram.csv");
        write_histogram_csv(file.path(), &histogram).unwrap();
        let back = read_histogram_csv(file.path()).unwrap();
        assert_eq!(back, histogram);
    }

    #[test]
    fn curve_roundtrip_preserves_values() {
        let curve = normalize(&toy_histogram(), 2_000, 6_000).unwrap();
        let file = TempFile::new("curve.csv");
        write_curve_csv(file.path(), &curve).unwrap();
        let back = read_curve_csv(file.path()).unwrap();
        assert_eq!(back.g2, curve.g2);
        assert_eq!(back.sigma, curve.sigma);
        assert_eq!(back.normalization, curve.normalization);
        for (x, y) in back.lag_ps.iter().zip(&curve.lag_ps) {
            assert!((x - y).abs() <= 1e-9 * y.abs().max(1.0));
        }
    }

    #[test]
    fn spectrum_and_trace_roundtrip() {
        let grid: Vec<f64> = (0..50).map(|i| 700.0 + 0.5 * i as f64).collect();
        let intensity: Vec<f64> = grid.iter().map(|&l| 1.0 + 0.001 * (l - 700.0)).collect();
        let spectrum = Spectrum::new(grid.clone(), intensity.clone()).unwrap();
        let file = TempFile::new("spectrum.csv");
        write_spectrum_csv(file.path(), &spectrum).unwrap();
        let back = read_spectrum_csv(file.path()).unwrap();
        assert_eq!(back.wavelength_nm, spectrum.wavelength_nm);
        assert_eq!(back.intensity, spectrum.intensity);

        let trace = TransmissionTrace::new(grid.clone(), intensity.clone())
            .unwrap()
            .with_reference(vec![2.0; 50])
            .unwrap();
        let tfile = TempFile::new("trace.csv");
        write_trace_csv(tfile.path(), &trace).unwrap();
        let back = read_trace_csv(tfile.path()).unwrap();
        assert_eq!(back.transmission, trace.transmission);
        assert_eq!(back.reference, trace.reference);

        let bare = TransmissionTrace::new(grid, intensity).unwrap();
        write_trace_csv(tfile.path(), &bare).unwrap();
        let back = read_trace_csv(tfile.path()).unwrap();
        assert_eq!(back.reference, None);
    }

    #[test]
    fn malformed_rows_name_the_line() {
        let file = TempFile::new("bad-spectrum.csv");
        fs::write(file.path(), "wavelength_nm,intensity\n700,1.0\napple,2\n").unwrap();
        match read_spectrum_csv(file.path()) {
            Err(Error::Format(message)) => assert!(message.contains(":3:"), "{message}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn mode_map_exports_matrix_and_tracks() {
        use crate::wgm::BandTrack;
        let map = ModeStructureMap {
            segment_center_nm: vec![712.5, 737.5],
            frequency_inv_nm: vec![0.0, 0.04, 0.08],
            amplitude: vec![vec![0.1, 1.0, 0.2], vec![0.3, 1.0, 0.4]],
            tracks: vec![BandTrack {
                order: 1,
                segment_center_nm: vec![712.5, 737.5],
                frequency_inv_nm: vec![0.16, 0.15],
                coefficient_nm: 81_000.0,
            }],
        };
        let matrix = TempFile::new("modemap.csv");
        write_mode_map_csv(matrix.path(), &map).unwrap();
        let text = fs::read_to_string(matrix.path()).unwrap();
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows[0], "frequency_inv_nm,712.5,737.5");
        assert_eq!(rows.len(), 1 + 3);
        assert_eq!(rows[2], "0.04,1,1");

        let tracks = TempFile::new("tracks.csv");
        write_band_tracks_csv(tracks.path(), &map).unwrap();
        let text = fs::read_to_string(tracks.path()).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "segment_center_nm,track_order,frequency_inv_nm"
        );
        assert_eq!(lines.next().unwrap(), "712.5,1,0.16");
    }
}
