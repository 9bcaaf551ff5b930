use crate::error::{Error, Result};

pub(crate) struct Chunk<'a> {
    pub id: [u8; 4],
    pub data: &'a [u8],
}

impl Chunk<'_> {
    /// For `LIST`/`RIFF` chunks, the form type and the nested chunks.
    pub fn list(&self) -> Result<([u8; 4], Vec<Chunk<'_>>)> {
        if self.data.len() < 4 {
            return Err(Error::MalformedMedia("truncated LIST".into()));
        }
        let kind = self.data[0..4].try_into().expect("4 bytes");
        Ok((kind, parse_chunks(&self.data[4..])?))
    }
}

pub(crate) fn parse_chunks(mut data: &[u8]) -> Result<Vec<Chunk<'_>>> {
    let mut out = vec![];
    while data.len() >= 8 {
        let id: [u8; 4] = data[0..4].try_into().expect("4 bytes");
        let size = u32::from_le_bytes(data[4..8].try_into().expect("4 bytes")) as usize;
        let body = data
            .get(8..8 + size)
            .ok_or_else(|| Error::MalformedMedia(format!("chunk {:?} overruns file", fourcc(&id))))?;
        out.push(Chunk { id, data: body });
        let advance = 8 + size + (size & 1);
        data = data.get(advance..).unwrap_or(&[]);
    }
    Ok(out)
}

pub(crate) fn fourcc(id: &[u8; 4]) -> String {
    String::from_utf8_lossy(id).into_owned()
}

pub(crate) fn u16_at(d: &[u8], off: usize) -> Result<u16> {
    d.get(off..off + 2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .ok_or_else(|| Error::MalformedMedia("truncated header".into()))
}

pub(crate) fn u32_at(d: &[u8], off: usize) -> Result<u32> {
    d.get(off..off + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::MalformedMedia("truncated header".into()))
}

pub(crate) fn i32_at(d: &[u8], off: usize) -> Result<i32> {
    u32_at(d, off).map(|v| v as i32)
}

pub(crate) fn put_chunk(out: &mut Vec<u8>, id: &[u8; 4], body: &[u8]) {
    out.extend_from_slice(id);
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(body);
    if body.len() % 2 == 1 {
        out.push(0);
    }
}

pub(crate) fn put_list(out: &mut Vec<u8>, outer: &[u8; 4], kind: &[u8; 4], body: &[u8]) {
    let mut inner = Vec::with_capacity(body.len() + 4);
    inner.extend_from_slice(kind);
    inner.extend_from_slice(body);
    put_chunk(out, outer, &inner);
}
