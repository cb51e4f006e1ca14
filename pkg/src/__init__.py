# LDSeg - Source Package
