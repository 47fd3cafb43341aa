use crate::error::{Error, Result};

/// Where a detected event came from. Kept only when a simulation is asked to
/// retain per-event provenance for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Emitter,
    Background,
}

/// Provenance of a simulated stream: enough to regenerate it bit for bit.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamMetadata {
    /// Pseudorandom generator used, e.g. `"chacha12/u64-inverse-cdf"`.
    pub rng: String,
    pub seed: Option<u64>,
    /// Free-form description of the scenario that produced the stream.
    pub source: String,
}

/// Detector click record for one channel: strictly increasing timestamps in
/// integer picoseconds.
///
/// Integer picoseconds keep lag arithmetic exact over arbitrarily long
/// records; 1 ps is far below any bin width used in the analyses here.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonStream {
    channel_id: u16,
    timestamps: Vec<u64>,
    duration_ps: u64,
    origins: Option<Vec<Origin>>,
    pub metadata: StreamMetadata,
}

impl PhotonStream {
    /// Builds a stream after checking the ordering and duration invariants.
    pub fn new(channel_id: u16, timestamps: Vec<u64>, duration_ps: u64) -> Result<Self> {
        for i in 1..timestamps.len() {
            if timestamps[i] <= timestamps[i - 1] {
                return Err(Error::UnsortedTimestamps { index: i });
            }
        }
        if let Some((index, &timestamp)) = timestamps
            .iter()
            .enumerate()
            .find(|(_, &t)| t >= duration_ps)
        {
            return Err(Error::TimestampPastDuration {
                index,
                timestamp,
                duration: duration_ps,
            });
        }
        Ok(Self {
            channel_id,
            timestamps,
            duration_ps,
            origins: None,
            metadata: StreamMetadata::default(),
        })
    }

    pub(crate) fn with_origins(mut self, origins: Vec<Origin>) -> Self {
        debug_assert_eq!(origins.len(), self.timestamps.len());
        self.origins = Some(origins);
        self
    }

    pub fn channel_id(&self) -> u16 {
        self.channel_id
    }

    pub fn timestamps(&self) -> &[u64] {
        &self.timestamps
    }

    pub fn duration_ps(&self) -> u64 {
        self.duration_ps
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Mean detected rate in events per picosecond.
    pub fn rate_per_ps(&self) -> f64 {
        if self.duration_ps == 0 {
            0.0
        } else {
            self.timestamps.len() as f64 / self.duration_ps as f64
        }
    }

    /// Per-event origin tags, when the simulation kept them.
    pub fn origins(&self) -> Option<&[Origin]> {
        self.origins.as_deref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unsorted_and_duplicate_timestamps() {
        assert!(matches!(
            PhotonStream::new(0, vec![5, 4], 10),
            Err(Error::UnsortedTimestamps { index: 1 })
        ));
        assert!(matches!(
            PhotonStream::new(0, vec![4, 4], 10),
            Err(Error::UnsortedTimestamps { index: 1 })
        ));
    }

    #[test]
    fn rejects_timestamps_at_or_past_duration() {
        assert!(matches!(
            PhotonStream::new(0, vec![1, 10], 10),
            Err(Error::TimestampPastDuration { index: 1, .. })
        ));
        assert!(PhotonStream::new(0, vec![1, 9], 10).is_ok());
    }

    #[test]
    fn empty_stream_is_valid() {
        let s = PhotonStream::new(3, vec![], 100).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.channel_id(), 3);
        assert_eq!(s.rate_per_ps(), 0.0);
    }
}
