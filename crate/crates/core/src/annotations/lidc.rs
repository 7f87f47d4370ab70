use roxmltree::{Document, Node};

use super::{AnnotationError, Contour, RadiologistRead, Result, GRID_SIZE};

/// All final (unblinded) reads of one radiologist.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadingSession {
    pub reader_index: usize,
    pub reads: Vec<RadiologistRead>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LidcDocument {
    /// `ResponseHeader/SeriesInstanceUid`, when the report carries one.
    pub series_uid: Option<String>,
    pub sessions: Vec<ReadingSession>,
}

/// Parses the reading sessions of an LIDC report.
pub fn parse_lidc_xml(document: &[u8]) -> Result<Vec<ReadingSession>> {
    parse_lidc_document(document).map(|d| d.sessions)
}

/// Like [`parse_lidc_xml`] but keeps the header fields as well.
///
/// Element names are matched on their local part, so the `http://www.nih.gov`
/// default namespace of the published reports is accepted as well as
/// un-namespaced fixtures. Non-nodule marks are skipped; nodule records
/// without any inclusion ROI are dropped. Exclusion ROIs (`inclusion` =
/// `FALSE`) describe holes and are not kept as contours.
pub fn parse_lidc_document(document: &[u8]) -> Result<LidcDocument> {
    let text = std::str::from_utf8(document)
        .map_err(|e| AnnotationError::MalformedXml(format!("not UTF-8: {e}")))?;
    let doc = Document::parse(text).map_err(|e| AnnotationError::MalformedXml(e.to_string()))?;
    let root = doc.root_element();
    if root.tag_name().name() != "LidcReadMessage" {
        return Err(AnnotationError::SchemaViolation(format!(
            "root element is <{}>, expected <LidcReadMessage>",
            root.tag_name().name()
        )));
    }

    let series_uid = child(root, "ResponseHeader")
        .and_then(|h| child(h, "SeriesInstanceUid"))
        .and_then(|n| n.text())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty());

    let mut sessions = Vec::new();
    for (reader_index, session) in children(root, "readingSession").enumerate() {
        let mut reads = Vec::new();
        for nodule in children(session, "unblindedReadNodule") {
            if let Some(read) = parse_nodule(nodule, reader_index)? {
                reads.push(read);
            }
        }
        sessions.push(ReadingSession { reader_index, reads });
    }
    Ok(LidcDocument { series_uid, sessions })
}

fn parse_nodule(node: Node, reader_index: usize) -> Result<Option<RadiologistRead>> {
    let nodule_id_raw = required_text(node, "noduleID")?.to_string();

    let malignancy = match child(node, "characteristics").and_then(|c| child(c, "malignancy")) {
        Some(m) => {
            let raw = m.text().map(str::trim).unwrap_or("");
            let score: u8 = raw.parse().map_err(|_| {
                AnnotationError::SchemaViolation(format!(
                    "nodule {nodule_id_raw}: malignancy {raw:?} is not an integer"
                ))
            })?;
            if !(1..=5).contains(&score) {
                return Err(AnnotationError::SchemaViolation(format!(
                    "nodule {nodule_id_raw}: malignancy {score} outside 1..=5"
                )));
            }
            Some(score)
        }
        None => None,
    };

    let mut contours = Vec::new();
    for roi in children(node, "roi") {
        let inclusion = child(roi, "inclusion")
            .and_then(|n| n.text())
            .map(|t| !t.trim().eq_ignore_ascii_case("false"))
            .unwrap_or(true);
        let z_position = parse_number(required_text(roi, "imageZposition")?, "imageZposition")?;
        let slice_ref = child(roi, "imageSOP_UID")
            .and_then(|n| n.text())
            .map(|s| s.trim().to_string());
        let mut points = Vec::new();
        for edge in children(roi, "edgeMap") {
            let x = parse_number(required_text(edge, "xCoord")?, "xCoord")?;
            let y = parse_number(required_text(edge, "yCoord")?, "yCoord")?;
            if !(0.0..GRID_SIZE).contains(&x) || !(0.0..GRID_SIZE).contains(&y) {
                return Err(AnnotationError::CoordinateOutOfRange { x, y });
            }
            points.push((x, y));
        }
        if points.is_empty() {
            return Err(AnnotationError::SchemaViolation(format!(
                "nodule {nodule_id_raw}: roi at z={z_position} has no edgeMap points"
            )));
        }
        if inclusion {
            contours.push(Contour { z_position, slice_ref, points });
        }
    }

    if contours.is_empty() {
        return Ok(None);
    }
    Ok(Some(RadiologistRead {
        reader_index,
        nodule_id_raw,
        malignancy,
        contours,
    }))
}

fn children<'a, 'i>(node: Node<'a, 'i>, name: &'static str) -> impl Iterator<Item = Node<'a, 'i>> {
    node.children()
        .filter(move |c| c.is_element() && c.tag_name().name() == name)
}

fn child<'a, 'i>(node: Node<'a, 'i>, name: &'static str) -> Option<Node<'a, 'i>> {
    children(node, name).next()
}

fn required_text<'a>(node: Node<'a, '_>, name: &'static str) -> Result<&'a str> {
    child(node, name)
        .and_then(|n| n.text())
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .ok_or_else(|| {
            AnnotationError::SchemaViolation(format!(
                "<{}> is missing <{name}>",
                node.tag_name().name()
            ))
        })
}

fn parse_number(raw: &str, field: &str) -> Result<f64> {
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| AnnotationError::SchemaViolation(format!("{field} {raw:?} is not a number")))
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_NODULE: &str = r#"<?xml version="1.0" encoding="UTF-8"?>
<LidcReadMessage xmlns="http://www.nih.gov" uid="1.1">
  <ResponseHeader>
    <SeriesInstanceUid>1.3.6.1.4.1.14519.5.2.1.6279</SeriesInstanceUid>
  </ResponseHeader>
  <readingSession>
    <servicingRadiologistID>reader-a</servicingRadiologistID>
    <unblindedReadNodule>
      <noduleID>Nodule 001</noduleID>
      <characteristics>
        <subtlety>5</subtlety>
        <malignancy>5</malignancy>
      </characteristics>
      <roi>
        <imageZposition>-125.000000</imageZposition>
        <imageSOP_UID>1.3.6.1.4.1.14519.5.2.1.6279.1</imageSOP_UID>
        <inclusion>TRUE</inclusion>
        <edgeMap><xCoord>312</xCoord><yCoord>200</yCoord></edgeMap>
        <edgeMap><xCoord>313</xCoord><yCoord>200</yCoord></edgeMap>
        <edgeMap><xCoord>313</xCoord><yCoord>201</yCoord></edgeMap>
        <edgeMap><xCoord>312</xCoord><yCoord>201</yCoord></edgeMap>
      </roi>
    </unblindedReadNodule>
    <nonNodule>
      <nonNoduleID>NN 1</nonNoduleID>
      <imageZposition>-130.0</imageZposition>
      <locus><xCoord>20</xCoord><yCoord>20</yCoord></locus>
    </nonNodule>
  </readingSession>
</LidcReadMessage>"#;

    #[test]
    fn single_session_single_nodule() {
        let doc = parse_lidc_document(ONE_NODULE.as_bytes()).unwrap();
        assert_eq!(doc.series_uid.as_deref(), Some("1.3.6.1.4.1.14519.5.2.1.6279"));
        assert_eq!(doc.sessions.len(), 1);
        let reads = &doc.sessions[0].reads;
        assert_eq!(reads.len(), 1);
        let read = &reads[0];
        assert_eq!(read.reader_index, 0);
        assert_eq!(read.nodule_id_raw, "Nodule 001");
        assert_eq!(read.malignancy, Some(5));
        assert_eq!(read.contours.len(), 1);
        let c = &read.contours[0];
        assert_eq!(c.z_position, -125.0);
        assert_eq!(c.slice_ref.as_deref(), Some("1.3.6.1.4.1.14519.5.2.1.6279.1"));
        assert_eq!(
            c.points,
            vec![(312.0, 200.0), (313.0, 200.0), (313.0, 201.0), (312.0, 201.0)]
        );
    }

    #[test]
    fn missing_characteristics_gives_no_score() {
        let xml = r#"<LidcReadMessage><readingSession><unblindedReadNodule>
            <noduleID>small</noduleID>
            <roi><imageZposition>-10.5</imageZposition>
              <edgeMap><xCoord>5</xCoord><yCoord>6</yCoord></edgeMap></roi>
            </unblindedReadNodule></readingSession></LidcReadMessage>"#;
        let sessions = parse_lidc_xml(xml.as_bytes()).unwrap();
        assert_eq!(sessions[0].reads[0].malignancy, None);
    }

    #[test]
    fn truncated_document_is_malformed() {
        let cut = &ONE_NODULE.as_bytes()[..ONE_NODULE.len() / 2];
        assert!(matches!(parse_lidc_xml(cut), Err(AnnotationError::MalformedXml(_))));
    }

    #[test]
    fn schema_errors() {
        let no_id = r#"<LidcReadMessage><readingSession><unblindedReadNodule>
            <roi><imageZposition>1</imageZposition><edgeMap><xCoord>5</xCoord><yCoord>6</yCoord></edgeMap></roi>
            </unblindedReadNodule></readingSession></LidcReadMessage>"#;
        assert!(matches!(parse_lidc_xml(no_id.as_bytes()), Err(AnnotationError::SchemaViolation(_))));

        let wrong_root = "<Other/>";
        assert!(matches!(parse_lidc_xml(wrong_root.as_bytes()), Err(AnnotationError::SchemaViolation(_))));

        let bad_score = r#"<LidcReadMessage><readingSession><unblindedReadNodule><noduleID>a</noduleID>
            <characteristics><malignancy>7</malignancy></characteristics>
            <roi><imageZposition>1</imageZposition><edgeMap><xCoord>5</xCoord><yCoord>6</yCoord></edgeMap></roi>
            </unblindedReadNodule></readingSession></LidcReadMessage>"#;
        assert!(matches!(parse_lidc_xml(bad_score.as_bytes()), Err(AnnotationError::SchemaViolation(_))));
    }

    #[test]
    fn out_of_grid_point() {
        let xml = r#"<LidcReadMessage><readingSession><unblindedReadNodule><noduleID>a</noduleID>
            <roi><imageZposition>1</imageZposition><edgeMap><xCoord>512</xCoord><yCoord>6</yCoord></edgeMap></roi>
            </unblindedReadNodule></readingSession></LidcReadMessage>"#;
        assert_eq!(
            parse_lidc_xml(xml.as_bytes()),
            Err(AnnotationError::CoordinateOutOfRange { x: 512.0, y: 6.0 })
        );
    }

    #[test]
    fn exclusion_rois_and_empty_records_are_dropped() {
        let xml = r#"<LidcReadMessage><readingSession>
            <unblindedReadNodule><noduleID>hole-only</noduleID>
              <roi><imageZposition>1</imageZposition><inclusion>FALSE</inclusion>
                <edgeMap><xCoord>5</xCoord><yCoord>6</yCoord></edgeMap></roi>
            </unblindedReadNodule>
            <unblindedReadNodule><noduleID>with-hole</noduleID>
              <roi><imageZposition>1</imageZposition><inclusion>TRUE</inclusion>
                <edgeMap><xCoord>5</xCoord><yCoord>6</yCoord></edgeMap></roi>
              <roi><imageZposition>1</imageZposition><inclusion>FALSE</inclusion>
                <edgeMap><xCoord>5</xCoord><yCoord>6</yCoord></edgeMap></roi>
            </unblindedReadNodule>
            </readingSession><readingSession/></LidcReadMessage>"#;
        let sessions = parse_lidc_xml(xml.as_bytes()).unwrap();
        assert_eq!(sessions.len(), 2);
        assert_eq!(sessions[0].reads.len(), 1);
        assert_eq!(sessions[0].reads[0].nodule_id_raw, "with-hole");
        assert_eq!(sessions[0].reads[0].contours.len(), 1);
        assert_eq!(sessions[1].reader_index, 1);
        assert!(sessions[1].reads.is_empty());
    }
}
