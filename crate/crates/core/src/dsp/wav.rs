use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{DspError, Waveform};

/// Reads a PCM16 or float32 RIFF/WAVE file, downmixing to mono by channel mean.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform, DspError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(DspError::MissingFile(path.to_path_buf()));
    }
    let reader = WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let channels = usize::from(spec.channels);
    if channels == 0 {
        return Err(DspError::MalformedHeader {
            path: path.to_path_buf(),
            detail: "zero channels".into(),
        });
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f32::from(v) / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (format, bits) => {
            return Err(DspError::UnsupportedCodec {
                path: path.to_path_buf(),
                detail: format!("{format:?} {bits}-bit"),
            })
        }
    };
    let samples: Vec<f32> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect();
    Waveform::new(samples, spec.sample_rate)
}

/// Writes a mono float32 WAV file.
pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<(), DspError> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in wave.samples() {
        writer.write_sample(s).map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

fn map_hound(path: &Path, err: hound::Error) -> DspError {
    let path = path.to_path_buf();
    match err {
        hound::Error::IoError(source) if source.kind() == std::io::ErrorKind::UnexpectedEof => {
            DspError::MalformedHeader { path, detail: "unexpected end of file".into() }
        }
        hound::Error::IoError(source) => DspError::Io { path, source },
        hound::Error::FormatError(detail) => DspError::MalformedHeader { path, detail: detail.into() },
        hound::Error::Unsupported | hound::Error::TooWide | hound::Error::InvalidSampleFormat => {
            DspError::UnsupportedCodec { path, detail: err.to_string() }
        }
        hound::Error::UnfinishedSample => {
            DspError::MalformedHeader { path, detail: "truncated sample data".into() }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_pcm16(path: &Path, channels: u16, rate: u32, frames: &[Vec<i16>]) {
        let spec = WavSpec { channels, sample_rate: rate, bits_per_sample: 16, sample_format: SampleFormat::Int };
        let mut w = WavWriter::create(path, spec).unwrap();
        for frame in frames {
            for &s in frame {
                w.write_sample(s).unwrap();
            }
        }
        w.finalize().unwrap();
    }

    #[test]
    fn one_second_mono_pcm16() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let frames: Vec<Vec<i16>> = (0..16_000).map(|i| vec![(i % 100) as i16 * 100]).collect();
        write_pcm16(&p, 1, 16_000, &frames);
        let w = load_wav(&p).unwrap();
        assert_eq!(w.len(), 16_000);
        assert_eq!(w.sample_rate(), 16_000);
        assert!(w.samples().iter().all(|s| (-1.0..=1.0).contains(s)));
    }

    #[test]
    fn stereo_antiphase_downmixes_to_silence() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("st.wav");
        let frames: Vec<Vec<i16>> = (0..800).map(|i| {
            let x = ((i * 37) % 2000) as i16 - 1000;
            vec![x, -x]
        }).collect();
        write_pcm16(&p, 2, 16_000, &frames);
        let w = load_wav(&p).unwrap();
        assert_eq!(w.len(), 800);
        assert!(w.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn text_file_is_malformed_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("fake.wav");
        std::fs::write(&p, "this is not audio at all, just some text").unwrap();
        assert!(matches!(load_wav(&p), Err(DspError::MalformedHeader { .. })));
    }

    #[test]
    fn missing_file_is_distinct() {
        assert!(matches!(load_wav("/nonexistent/x.wav"), Err(DspError::MissingFile(_))));
    }

    #[test]
    fn pcm24_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p24.wav");
        let spec = WavSpec { channels: 1, sample_rate: 16_000, bits_per_sample: 24, sample_format: SampleFormat::Int };
        let mut w = WavWriter::create(&p, spec).unwrap();
        for _ in 0..10 {
            w.write_sample(0i32).unwrap();
        }
        w.finalize().unwrap();
        assert!(matches!(load_wav(&p), Err(DspError::UnsupportedCodec { .. })));
    }

    #[test]
    fn float_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        let wave = Waveform::new(vec![0.25, -1.5, 0.0, 0.75], 16_000).unwrap();
        write_wav(&p, &wave).unwrap();
        assert_eq!(load_wav(&p).unwrap(), wave);
    }
}
