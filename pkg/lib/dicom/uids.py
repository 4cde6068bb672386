from pydicom.uid import UID, ExplicitVRLittleEndian, ImplicitVRLittleEndian

IMPLICIT_VR_LE = UID(ImplicitVRLittleEndian)
EXPLICIT_VR_LE = UID(ExplicitVRLittleEndian)
SUPPORTED_TRANSFER_SYNTAXES = (EXPLICIT_VR_LE, IMPLICIT_VR_LE)

APPLICATION_CONTEXT = UID("1.2.840.10008.3.1.1.1")
VERIFICATION = UID("1.2.840.10008.1.1")

CT_IMAGE_STORAGE = UID("1.2.840.10008.5.1.4.1.1.2")
MR_IMAGE_STORAGE = UID("1.2.840.10008.5.1.4.1.1.4")
DIGITAL_XRAY_STORAGE = UID("1.2.840.10008.5.1.4.1.1.1.1")
SECONDARY_CAPTURE_STORAGE = UID("1.2.840.10008.5.1.4.1.1.7")
SEGMENTATION_STORAGE = UID("1.2.840.10008.5.1.4.1.1.66.4")
RT_STRUCTURE_SET_STORAGE = UID("1.2.840.10008.5.1.4.1.1.481.3")
BASIC_TEXT_SR_STORAGE = UID("1.2.840.10008.5.1.4.1.1.88.11")
ENHANCED_SR_STORAGE = UID("1.2.840.10008.5.1.4.1.1.88.22")
COMPREHENSIVE_SR_STORAGE = UID("1.2.840.10008.5.1.4.1.1.88.33")
COMPREHENSIVE_3D_SR_STORAGE = UID("1.2.840.10008.5.1.4.1.1.88.34")

SR_STORAGE_CLASSES = frozenset(
    {BASIC_TEXT_SR_STORAGE, ENHANCED_SR_STORAGE, COMPREHENSIVE_SR_STORAGE, COMPREHENSIVE_3D_SR_STORAGE}
)

# Storage classes the gateway's SCP accepts out of the box.
STORAGE_CLASSES = (
    CT_IMAGE_STORAGE,
    MR_IMAGE_STORAGE,
    DIGITAL_XRAY_STORAGE,
    SECONDARY_CAPTURE_STORAGE,
    SEGMENTATION_STORAGE,
    RT_STRUCTURE_SET_STORAGE,
    *sorted(SR_STORAGE_CLASSES),
)

IMPLEMENTATION_CLASS_UID = UID("1.2.826.0.1.3680043.8.498.1.7")
IMPLEMENTATION_VERSION = "FLOWGATE_010"


def is_supported(transfer_syntax: str) -> bool:
    return transfer_syntax in SUPPORTED_TRANSFER_SYNTAXES
