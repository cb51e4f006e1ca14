# LDSeg - Tests Package
