/// Little-endian cursor whose errors name the field being read.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub(crate) fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N], String> {
        Ok(self.slice(N, what)?.try_into().unwrap())
    }

    pub(crate) fn slice(&mut self, n: usize, what: &str) -> Result<&'a [u8], String> {
        let chunk = self
            .pos
            .checked_add(n)
            .and_then(|end| self.bytes.get(self.pos..end))
            .ok_or_else(|| format!("truncated at byte {} reading {what}", self.pos))?;
        self.pos += n;
        Ok(chunk)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8, String> {
        Ok(self.take::<1>(what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(what)?))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(what)?))
    }

    pub(crate) fn f32(&mut self, what: &str) -> Result<f64, String> {
        Ok(f32::from_le_bytes(self.take(what)?) as f64)
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}
